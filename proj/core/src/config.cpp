// Copyright 2023 Google LLC
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mcr/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/hash.hpp"

namespace mcr {

void CostModel::validate() const {
  if (compute_tick < 0 || net_per_byte < 0 || local_write_per_byte < 0 || encode_per_byte < 0 ||
      ctx_switch < 0 || pfs_per_byte < 0) {
    throw Error(ErrorCode::kInvalidArgument, "cost model fields must be non-negative");
  }
  if (process_switch_multiplier < 1) {
    throw Error(ErrorCode::kInvalidArgument, "process_switch_multiplier must be >= 1");
  }
}

namespace config {

std::string_view to_string(Driver d) {
  switch (d) {
    case Driver::kInproc: return "inproc";
    case Driver::kTcp: return "tcp";
    case Driver::kMockRdma: return "mock_rdma";
  }
  return "?";
}

std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::kRing: return "ring";
    case Topology::kNone: return "none";
    case Topology::kFull: return "full";
  }
  return "?";
}

Ticks default_latency(Driver d) {
  switch (d) {
    case Driver::kInproc: return 2;
    case Driver::kTcp: return 20;
    case Driver::kMockRdma: return 4;
  }
  return 0;
}

bool default_checkpointable(Driver d) { return d == Driver::kInproc; }

bool RailSpec::gates_pass(std::uint64_t message_size) const {
  return std::all_of(gates.begin(), gates.end(),
                     [&](const GateSpec& g) { return g.passes(message_size); });
}

const DriverConfig* NetConfig::find_driver(std::string_view name) const {
  for (const auto& d : drivers)
    if (d.name == name) return &d;
  return nullptr;
}

const RailSpec* NetConfig::find_rail(std::string_view name) const {
  for (const auto& r : rails)
    if (r.name == name) return &r;
  return nullptr;
}

const NetOption* NetConfig::find_option(std::string_view name) const {
  for (const auto& o : options)
    if (o.name == name) return &o;
  return nullptr;
}

std::vector<RailSpec> NetConfig::rails_for(std::string_view option) const {
  const NetOption* opt = find_option(option);
  if (opt == nullptr) {
    throw Error(ErrorCode::kDanglingReference, fmt::format("unknown net option '{}'", option));
  }
  std::vector<RailSpec> out;
  for (const auto& name : opt->rails) {
    const RailSpec* r = find_rail(name);
    if (r == nullptr) {
      throw Error(ErrorCode::kDanglingReference, fmt::format("unknown rail '{}'", name));
    }
    out.push_back(*r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RailSpec& a, const RailSpec& b) { return a.priority > b.priority; });
  return out;
}

std::uint64_t parse_size(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  if (i == 0) throw Error(ErrorCode::kSyntaxError, fmt::format("bad size '{}'", text));
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + i, value);
  if (ec != std::errc()) throw Error(ErrorCode::kSyntaxError, fmt::format("bad size '{}'", text));
  std::string suffix(text.substr(i));
  std::transform(suffix.begin(), suffix.end(), suffix.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (suffix.empty() || suffix == "B") return value;
  if (suffix == "KB") return value * 1024;
  if (suffix == "MB") return value * 1024 * 1024;
  throw Error(ErrorCode::kSyntaxError, fmt::format("unknown size suffix in '{}'", text));
}

namespace {

enum class Tok { kWord, kLBrace, kRBrace, kEquals, kSemi, kComma, kNewline, kEnd };

struct Token {
  Tok kind;
  std::string text;
  int line;
};

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  int line = 1;
  std::size_t i = 0;
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' ||
           c == ':' || c == '/';
  };
  while (i < text.size()) {
    char c = text[i];
    if (c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
    } else if (c == '\n') {
      out.push_back({Tok::kNewline, "\n", line++});
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '{' || c == '}' || c == '=' || c == ';' || c == ',') {
      Tok k = c == '{'   ? Tok::kLBrace
              : c == '}' ? Tok::kRBrace
              : c == '=' ? Tok::kEquals
              : c == ';' ? Tok::kSemi
                         : Tok::kComma;
      out.push_back({k, std::string(1, c), line});
      ++i;
    } else if (is_word(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word(text[j])) ++j;
      out.push_back({Tok::kWord, std::string(text.substr(i, j - i)), line});
      i = j;
    } else {
      throw Error(ErrorCode::kSyntaxError,
                  fmt::format("line {}: unexpected character '{}'", line, c));
    }
  }
  out.push_back({Tok::kEnd, "", line});
  return out;
}

struct Statement {
  std::string key;
  std::string subkey;  // e.g. "minsize" in "gate minsize = 32KB"
  std::vector<std::string> values;
  int line;
};

struct Block {
  std::string kind;
  std::string name;
  std::vector<Statement> statements;
  int line;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  std::vector<Block> blocks() {
    std::vector<Block> out;
    skip_separators();
    while (peek().kind != Tok::kEnd) {
      out.push_back(block());
      skip_separators();
    }
    return out;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }

  [[noreturn]] void fail(const Token& t, std::string_view what) const {
    throw Error(ErrorCode::kSyntaxError,
                fmt::format("line {}: expected {}, got '{}'", t.line, what,
                            t.kind == Tok::kEnd ? "end of input" : t.text));
  }

  const Token& expect(Tok kind, std::string_view what) {
    if (peek().kind != kind) fail(peek(), what);
    return next();
  }

  void skip_separators() {
    while (peek().kind == Tok::kNewline || peek().kind == Tok::kSemi) next();
  }

  Block block() {
    Block b;
    const Token& kind = expect(Tok::kWord, "block keyword");
    b.kind = kind.text;
    b.line = kind.line;
    b.name = expect(Tok::kWord, "block name").text;
    while (peek().kind == Tok::kNewline) next();
    expect(Tok::kLBrace, "'{'");
    for (;;) {
      skip_separators();
      if (peek().kind == Tok::kRBrace) {
        next();
        break;
      }
      b.statements.push_back(statement());
    }
    return b;
  }

  Statement statement() {
    Statement s;
    const Token& key = expect(Tok::kWord, "key");
    s.key = key.text;
    s.line = key.line;
    if (peek().kind == Tok::kWord) s.subkey = next().text;
    expect(Tok::kEquals, "'='");
    s.values.push_back(expect(Tok::kWord, "value").text);
    while (peek().kind == Tok::kComma) {
      next();
      while (peek().kind == Tok::kNewline) next();
      s.values.push_back(expect(Tok::kWord, "value").text);
    }
    if (peek().kind != Tok::kSemi && peek().kind != Tok::kNewline && peek().kind != Tok::kRBrace) {
      fail(peek(), "';' or end of line");
    }
    return s;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

[[noreturn]] void bad_statement(const Block& b, const Statement& s, std::string_view why) {
  throw Error(ErrorCode::kSyntaxError,
              fmt::format("line {}: {} '{}': {}", s.line, b.kind, b.name, why));
}

const std::string& single_value(const Block& b, const Statement& s) {
  if (s.values.size() != 1 || !s.subkey.empty()) bad_statement(b, s, "expected a single value");
  return s.values.front();
}

long long parse_int(const Block& b, const Statement& s) {
  const std::string& v = single_value(b, s);
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_statement(b, s, "expected an integer");
  return out;
}

Driver parse_driver(const Block& b, const Statement& s) {
  const std::string& v = single_value(b, s);
  if (v == "tcp") return Driver::kTcp;
  if (v == "inproc") return Driver::kInproc;
  if (v == "mock_rdma") return Driver::kMockRdma;
  bad_statement(b, s, fmt::format("unknown driver '{}'", v));
}

Topology parse_topology(const Block& b, const Statement& s) {
  const std::string& v = single_value(b, s);
  if (v == "ring") return Topology::kRing;
  if (v == "none") return Topology::kNone;
  if (v == "full") return Topology::kFull;
  bad_statement(b, s, fmt::format("unknown topology '{}'", v));
}

bool parse_bool(const Block& b, const Statement& s) {
  const std::string& v = single_value(b, s);
  if (v == "true") return true;
  if (v == "false") return false;
  bad_statement(b, s, "expected true or false");
}

struct PendingRail {
  RailSpec spec;
  std::optional<bool> checkpointable;
  bool has_topology = false;
  int line = 0;
};

}  // namespace

NetConfig parse_config(std::string_view text) {
  std::vector<Block> blocks = Parser(tokenize(text)).blocks();

  NetConfig cfg;
  std::vector<PendingRail> rails;
  std::set<std::string> seen_configs, seen_rails, seen_options;

  for (const Block& b : blocks) {
    if (b.kind == "config") {
      if (!seen_configs.insert(b.name).second) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: duplicate config '{}'", b.line, b.name));
      }
      DriverConfig d;
      d.name = b.name;
      bool has_driver = false;
      std::optional<Ticks> latency;
      for (const auto& s : b.statements) {
        if (s.key == "driver") {
          d.driver = parse_driver(b, s);
          has_driver = true;
        } else if (s.key == "latency") {
          long long v = parse_int(b, s);
          if (v < 0) bad_statement(b, s, "latency must be >= 0");
          latency = v;
        } else {
          bad_statement(b, s, fmt::format("unknown key '{}'", s.key));
        }
      }
      if (!has_driver) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: config '{}' has no driver", b.line, b.name));
      }
      d.latency = latency.value_or(default_latency(d.driver));
      cfg.drivers.push_back(d);
    } else if (b.kind == "rail") {
      if (!seen_rails.insert(b.name).second) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: duplicate rail '{}'", b.line, b.name));
      }
      PendingRail r;
      r.spec.name = b.name;
      r.line = b.line;
      for (const auto& s : b.statements) {
        if (s.key == "priority") {
          long long v = parse_int(b, s);
          if (v < 0) bad_statement(b, s, "priority must be >= 0");
          r.spec.priority = static_cast<int>(v);
        } else if (s.key == "topology") {
          r.spec.topology = parse_topology(b, s);
          r.has_topology = true;
        } else if (s.key == "config") {
          r.spec.config_ref = single_value(b, s);
        } else if (s.key == "checkpointable") {
          r.checkpointable = parse_bool(b, s);
        } else if (s.key == "gate") {
          if (s.subkey != "minsize" || s.values.size() != 1) {
            bad_statement(b, s, "expected 'gate minsize = <size>'");
          }
          GateSpec g;
          g.value = parse_size(s.values.front());
          if (g.value == 0) bad_statement(b, s, "gate value must be > 0");
          r.spec.gates.push_back(g);
        } else {
          bad_statement(b, s, fmt::format("unknown key '{}'", s.key));
        }
      }
      if (!r.has_topology) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: rail '{}' has no topology", b.line, b.name));
      }
      if (r.spec.config_ref.empty()) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: rail '{}' has no config", b.line, b.name));
      }
      rails.push_back(std::move(r));
    } else if (b.kind == "option") {
      if (!seen_options.insert(b.name).second) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: duplicate option '{}'", b.line, b.name));
      }
      NetOption o;
      o.name = b.name;
      for (const auto& s : b.statements) {
        if (s.key != "rails" || !s.subkey.empty()) {
          bad_statement(b, s, fmt::format("unknown key '{}'", s.key));
        }
        o.rails.insert(o.rails.end(), s.values.begin(), s.values.end());
      }
      if (o.rails.empty()) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("line {}: option '{}' lists no rails", b.line, b.name));
      }
      cfg.options.push_back(std::move(o));
    } else {
      throw Error(ErrorCode::kSyntaxError,
                  fmt::format("line {}: unknown block '{}'", b.line, b.kind));
    }
  }

  for (auto& r : rails) {
    const DriverConfig* d = cfg.find_driver(r.spec.config_ref);
    if (d == nullptr) {
      throw Error(ErrorCode::kDanglingReference,
                  fmt::format("rail '{}' references unknown config '{}'", r.spec.name,
                              r.spec.config_ref));
    }
    r.spec.driver = d->driver;
    r.spec.latency = d->latency;
    if (r.checkpointable.value_or(false) && d->driver == Driver::kMockRdma) {
      throw Error(ErrorCode::kSyntaxError,
                  fmt::format("line {}: rail '{}': mock_rdma state is not checkpointable", r.line,
                              r.spec.name));
    }
    r.spec.checkpointable = r.checkpointable.value_or(default_checkpointable(d->driver));
    cfg.rails.push_back(std::move(r.spec));
  }

  for (const auto& o : cfg.options) {
    std::set<std::string> unique;
    bool has_ring = false;
    for (const auto& name : o.rails) {
      const RailSpec* r = cfg.find_rail(name);
      if (r == nullptr) {
        throw Error(ErrorCode::kDanglingReference,
                    fmt::format("option '{}' references unknown rail '{}'", o.name, name));
      }
      if (!unique.insert(name).second) {
        throw Error(ErrorCode::kSyntaxError,
                    fmt::format("option '{}' lists rail '{}' twice", o.name, name));
      }
      has_ring = has_ring || r->accepts_all_ring();
    }
    if (!has_ring) {
      throw Error(ErrorCode::kNoRingRail,
                  fmt::format("option '{}' has no gate-free ring rail", o.name));
    }
  }
  return cfg;
}

std::string serialize_config(const NetConfig& config) {
  std::string out;
  for (const auto& d : config.drivers) {
    out += fmt::format("config {} {{ driver = {}; latency = {}; }}\n", d.name, to_string(d.driver),
                       d.latency);
  }
  for (const auto& r : config.rails) {
    out += fmt::format("rail {} {{ priority = {}; topology = {}; config = {}; checkpointable = {};",
                       r.name, r.priority, to_string(r.topology), r.config_ref,
                       r.checkpointable ? "true" : "false");
    for (const auto& g : r.gates) out += fmt::format(" gate minsize = {};", g.value);
    out += " }\n";
  }
  for (const auto& o : config.options) {
    out += fmt::format("option {} {{ rails = {}; }}\n", o.name, fmt::join(o.rails, ", "));
  }
  return out;
}

std::string_view builtin_multirail_tcp() {
  return R"(# Two TCP rails sharing one driver configuration.
config tcp_config_mpi { driver = tcp }

rail tcp_mpi {
  priority = 1
  topology = ring
  config = tcp_config_mpi
}

rail tcp_large {
  priority = 10
  topology = none
  config = tcp_config_mpi
  gate minsize = 32KB
}

option multirail_tcp { rails = tcp_large, tcp_mpi }
)";
}

void JobSpec::validate() const {
  if (n_processes < 1) throw Error(ErrorCode::kInvalidArgument, "n_processes must be >= 1");
  if (tasks_per_process < 1) {
    throw Error(ErrorCode::kInvalidArgument, "tasks_per_process must be >= 1");
  }
  if (lanes_per_process < 1) {
    throw Error(ErrorCode::kInvalidArgument, "lanes_per_process must be >= 1");
  }
  cost.validate();
}

std::string JobSpec::canonical() const {
  return fmt::format(
      "n_processes={}\ntasks_per_process={}\nlanes_per_process={}\nnet_option={}\n"
      "cost={},{},{},{},{},{},{}\n",
      n_processes, tasks_per_process, lanes_per_process, net_option, cost.compute_tick,
      cost.net_per_byte, cost.local_write_per_byte, cost.encode_per_byte, cost.ctx_switch,
      cost.pfs_per_byte, cost.process_switch_multiplier);
}

std::string config_hash(const NetConfig& net, const JobSpec& job) {
  return sha256_hex(serialize_config(net) + job.canonical());
}

}  // namespace config
}  // namespace mcr
