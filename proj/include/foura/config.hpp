#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "foura/errors.hpp"
#include "foura/trainer.hpp"

namespace foura {

inline std::string to_string(Task t) {
  return t == Task::MatrixFit ? "matrix_fit" : "toy_denoise";
}

inline std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::None: return "none";
    case TransformKind::Dft: return "dft";
    case TransformKind::Dct: return "dct";
  }
  return "none";
}

inline std::string to_string(Axis a) {
  return a == Axis::Embedding ? "embedding" : "token";
}

inline std::string to_string(GateChoice g) {
  switch (g) {
    case GateChoice::Absent: return "absent";
    case GateChoice::Soft: return "soft";
    case GateChoice::HardAdaptive: return "hard_adaptive";
    case GateChoice::Frozen: return "frozen";
  }
  return "absent";
}

inline std::string to_string(OptimizerKind o) {
  return o == OptimizerKind::Sgd ? "sgd" : "adam";
}

namespace detail {

inline Task parse_task(std::string_view s) {
  if (s == "matrix_fit") return Task::MatrixFit;
  if (s == "toy_denoise") return Task::ToyDenoise;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

inline TransformKind parse_transform(std::string_view s) {
  if (s == "none") return TransformKind::None;
  if (s == "dft") return TransformKind::Dft;
  if (s == "dct") return TransformKind::Dct;
  throw ConfigError("unknown transform '" + std::string(s) + "'");
}

inline Axis parse_axis(std::string_view s) {
  if (s == "embedding") return Axis::Embedding;
  if (s == "token") return Axis::Token;
  throw ConfigError("unknown axis '" + std::string(s) + "'");
}

inline GateChoice parse_gate(std::string_view s) {
  if (s == "absent") return GateChoice::Absent;
  if (s == "soft") return GateChoice::Soft;
  if (s == "hard_adaptive") return GateChoice::HardAdaptive;
  if (s == "frozen") return GateChoice::Frozen;
  throw ConfigError("unknown gate_mode '" + std::string(s) + "'");
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline double parse_real(std::string_view s) {
  // std::from_chars for doubles is locale-independent
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("bad real value '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("bad integer value '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

// Flat key=value configuration. Lines starting with '#' and blank lines are
// skipped; unknown keys and malformed values are reported with their line.
inline TrainConfig parse_train_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    try {
      if (key == "task") cfg.task = detail::parse_task(value);
      else if (key == "rank") cfg.rank = detail::parse_u64(value);
      else if (key == "transform") cfg.transform = detail::parse_transform(value);
      else if (key == "axis") cfg.axis = detail::parse_axis(value);
      else if (key == "gate_mode") cfg.gate_mode = detail::parse_gate(value);
      else if (key == "steps") cfg.steps = detail::parse_u64(value);
      else if (key == "lr") cfg.lr = detail::parse_real(value);
      else if (key == "batch") cfg.batch = detail::parse_u64(value);
      else if (key == "seed") cfg.seed = detail::parse_u64(value);
      else if (key == "lambda_entropy") cfg.lambda_entropy = detail::parse_real(value);
      else if (key == "alpha") cfg.alpha = detail::parse_real(value);
      else if (key == "optimizer") cfg.optimizer = detail::parse_optimizer(value);
      else if (key == "threshold") cfg.gate_threshold = detail::parse_real(value);
      else if (key == "k1") cfg.k1 = detail::parse_u64(value);
      else if (key == "k2") cfg.k2 = detail::parse_u64(value);
      else if (key == "r_true") cfg.r_true = detail::parse_u64(value);
      else if (key == "signal_scale") cfg.signal_scale = detail::parse_real(value);
      else if (key == "tail_scale") cfg.tail_scale = detail::parse_real(value);
      else if (key == "target_id") cfg.target_id = detail::parse_u64(value);
      else if (key == "eval_batch") cfg.eval_batch = detail::parse_u64(value);
      else throw ConfigError("unknown key '" + std::string(key) + "'");
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_train_config(cfg);
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config_text(buf.str());
}

}  // namespace foura
