#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sciml {

enum class Activation { Linear, Relu, LeakyRelu, Logistic, Tanh, Sine };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Logistic: return "logistic";
        case Activation::Tanh: return "tanh";
        case Activation::Sine: return "sine";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "linear") return Activation::Linear;
    if (s == "relu") return Activation::Relu;
    if (s == "leaky_relu") return Activation::LeakyRelu;
    if (s == "logistic") return Activation::Logistic;
    if (s == "tanh") return Activation::Tanh;
    if (s == "sine") return Activation::Sine;
    throw std::invalid_argument("unknown activation: " + s);
}

/// True for activations with derivatives of every order; graph extension
/// (derivatives with respect to network inputs) is only defined for these.
inline bool activation_is_smooth(Activation a) {
    return a == Activation::Linear || a == Activation::Logistic || a == Activation::Tanh ||
           a == Activation::Sine;
}

/// Thrown when an operation needs more derivatives than an activation has.
class SmoothnessError : public std::runtime_error {
public:
    explicit SmoothnessError(const std::string& what) : std::runtime_error(what) {}
};

/// sigma^(order)(xi) for order 0..3. ReLU uses the subgradient convention
/// sigma'(0) = 0; orders above 1 are rejected for the ReLU family.
inline double act_eval(Activation kind, double alpha, int order, double xi) {
    switch (kind) {
        case Activation::Linear:
            if (order == 0) return xi;
            return order == 1 ? 1.0 : 0.0;
        case Activation::Relu:
            if (order == 0) return xi > 0.0 ? xi : 0.0;
            if (order == 1) return xi > 0.0 ? 1.0 : 0.0;
            throw SmoothnessError("insufficient smoothness: relu has no derivative of order " +
                                  std::to_string(order));
        case Activation::LeakyRelu:
            if (order == 0) return xi > 0.0 ? xi : alpha * xi;
            if (order == 1) return xi > 0.0 ? 1.0 : alpha;
            throw SmoothnessError(
                "insufficient smoothness: leaky_relu has no derivative of order " +
                std::to_string(order));
        case Activation::Logistic: {
            const double s = 1.0 / (1.0 + std::exp(-xi));
            switch (order) {
                case 0: return s;
                case 1: return s * (1.0 - s);
                case 2: return s * (1.0 - s) * (1.0 - 2.0 * s);
                case 3: return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s);
            }
            break;
        }
        case Activation::Tanh: {
            const double t = std::tanh(xi);
            switch (order) {
                case 0: return t;
                case 1: return 1.0 - t * t;
                case 2: return -2.0 * t * (1.0 - t * t);
                case 3: return (6.0 * t * t - 2.0) * (1.0 - t * t);
            }
            break;
        }
        case Activation::Sine:
            // Derivatives cycle with period 4.
            switch (order & 3) {
                case 0: return std::sin(xi);
                case 1: return std::cos(xi);
                case 2: return -std::sin(xi);
                case 3: return -std::cos(xi);
            }
            break;
    }
    throw std::invalid_argument("activation derivative order " + std::to_string(order) +
                                " not supported");
}

}  // namespace sciml
