#include "msforge/cli.hpp"

int main(int argc, char** argv) { return msforge::cli::run(argc, argv); }
