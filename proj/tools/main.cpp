#include "gipad/cli.hpp"

int main(int argc, char** argv) { return gipad::run_cli(argc, argv); }
