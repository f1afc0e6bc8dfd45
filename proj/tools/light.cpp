// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#include "kgmarl/cli.hpp"

int main(int argc, char** argv) { return kgmarl::run_cli(argc, argv); }
