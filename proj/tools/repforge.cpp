#include <repforge/cli.hpp>

int main(int argc, char** argv) { return repforge::cli::run(argc, argv); }
