#include "nnsd/io.hpp"

int main(int argc, char** argv) { return nnsd::cli_dispatch(argc, argv); }
