// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Text checkpoint container:
//   kgmarl-checkpoint 1
//   <count>
//   <name> <rows> <cols>
//   <rows*cols values, row-major, %.17g>
// Values round-trip bit-exactly.

#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "kgmarl/tensor.hpp"

namespace kgmarl {

inline constexpr const char* kCheckpointMagic = "kgmarl-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ParamStore& params) {
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << params.entries().size() << '\n';
  char buf[32];
  for (const auto& [name, p] : params.entries()) {
    os << name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.value.data()[i]);
      os << buf << ((i + 1) % p.value.cols() == 0 ? '\n' : ' ');
    }
  }
}

/// Reads into a store whose layout is already registered; any name or shape
/// difference is a ConfigError.
inline void read_checkpoint(std::istream& is, ParamStore& params) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic) throw ConfigError("not a kgmarl checkpoint");
  if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  if (!(is >> count)) throw ConfigError("checkpoint: missing parameter count");
  if (count != params.entries().size()) {
    throw ConfigError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(params.entries().size()));
  }
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols)) throw ConfigError("checkpoint: truncated header");
    if (!params.contains(name)) throw ConfigError("checkpoint: unexpected parameter '" + name + "'");
    Matrix m(rows, cols);
    std::string tok;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (!(is >> tok)) throw ConfigError("checkpoint: truncated values for '" + name + "'");
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ConfigError("checkpoint: bad number '" + tok + "' in '" + name + "'");
      }
      m.data()[i] = v;
    }
    params.assign(name, m);
  }
}

inline void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, params);
}

inline void load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  read_checkpoint(is, params);
}

}  // namespace kgmarl
