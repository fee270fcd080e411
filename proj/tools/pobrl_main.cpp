#include "pobrl/cli.hpp"

int main(int argc, char** argv) { return pobrl::cli::run(argc, argv); }
