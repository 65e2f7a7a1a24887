#include "cachelm/cli/app.hpp"

int main(int argc, char** argv) { return cachelm::run_cli(argc, argv); }
