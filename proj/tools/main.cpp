#include "pointcra/cli.hpp"

int main(int argc, char** argv) { return pointcra::run_cli(argc, argv); }
