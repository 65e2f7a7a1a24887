#pragma once

namespace cachelm {

/// Command-line entry point: train | eval | analyze | rescore | selftest.
int run_cli(int argc, char** argv);

}  // namespace cachelm
