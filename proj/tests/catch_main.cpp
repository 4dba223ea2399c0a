// Single translation unit holding the amalgamated Catch2 implementation
// (with its default main), shared by every test executable.
#include <catch2/catch_amalgamated.cpp>
