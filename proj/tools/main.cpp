#include "trajstack/cli.hpp"

int main(int argc, char** argv) { return trajstack::cli::run(argc, argv); }
