#include "cli.hpp"

int main(int argc, char** argv) { return stylespace::run_cli(argc, argv); }
