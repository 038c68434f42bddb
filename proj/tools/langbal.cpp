#include "langbal/cli.hpp"

int main(int argc, char** argv) { return langbal::run_cli(argc, argv); }
