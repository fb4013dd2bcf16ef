#include "commands.hpp"

int main(int argc, char** argv) { return pulse::cli::run_cli(argc, argv); }
