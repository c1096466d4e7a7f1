#pragma once

// Flat "key = value" scenario files with [potential] [grid] [time] [initial]
// [observers] sections, plus command-line overrides.

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "gradflow/experiments.hpp"

namespace gradflow {

struct ConfigField {
  std::string section;
  std::string key;
  std::function<std::string(const Scenario&)> get;
  std::function<void(Scenario&, const std::string&)> set;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double x = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw Error(ErrorKind::Config, "key '" + key + "' expects a number, got '" + text + "'");
  return x;
}

inline int parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  int x = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw Error(ErrorKind::Config, "key '" + key + "' expects an integer, got '" + text + "'");
  return x;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_double(key, tok));
  if (out.empty()) throw Error(ErrorKind::Config, "key '" + key + "' expects a comma-separated list");
  return out;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt::format("{}", v[i]);
  return s;
}

}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
  using S = Scenario;
  auto num = [](std::string sec, std::string key, double S::*m) {
    return ConfigField{sec, key, [m](const S& s) { return fmt::format("{}", s.*m); },
                       [m, key](S& s, const std::string& v) { s.*m = detail::parse_double(key, v); }};
  };
  auto integer = [](std::string sec, std::string key, int S::*m) {
    return ConfigField{sec, key, [m](const S& s) { return fmt::format("{}", s.*m); },
                       [m, key](S& s, const std::string& v) { s.*m = detail::parse_int(key, v); }};
  };
  auto text = [](std::string sec, std::string key, std::string S::*m) {
    return ConfigField{sec, key, [m](const S& s) { return s.*m; },
                       [m](S& s, const std::string& v) { s.*m = detail::trim(v); }};
  };
  auto list = [](std::string sec, std::string key, std::vector<double> S::*m) {
    return ConfigField{sec, key, [m](const S& s) { return detail::fmt_list(s.*m); },
                       [m, key](S& s, const std::string& v) { s.*m = detail::parse_list(key, v); }};
  };
  static const std::vector<ConfigField> fields{
      text("potential", "name", &S::potential),
      num("potential", "diffusion", &S::diffusion),
      num("grid", "x_min", &S::x_min),
      num("grid", "x_max", &S::x_max),
      num("grid", "dx", &S::dx),
      text("grid", "boundary", &S::boundary),
      num("time", "dt", &S::dt),
      num("time", "T_final", &S::T_final),
      num("time", "cap_time", &S::cap_time),
      text("initial", "kind", &S::initial),
      list("initial", "m_minus", &S::m_minus),
      list("initial", "m_plus", &S::m_plus),
      num("initial", "center", &S::center),
      num("initial", "width", &S::width),
      list("initial", "u_neg", &S::u_neg),
      num("initial", "L", &S::L),
      num("initial", "s", &S::s),
      num("initial", "s_lo", &S::s_lo),
      num("initial", "s_hi", &S::s_hi),
      num("initial", "tol_s", &S::tol_s),
      text("initial", "items", &S::items),
      integer("observers", "stride", &S::stride),
      integer("observers", "profile_every", &S::profile_every),
      num("observers", "c_factor", &S::c_factor),
      num("observers", "dense_until", &S::dense_until),
  };
  return fields;
}

/// Looks up "key" or "section.key".
inline const ConfigField& config_field(const std::string& name) {
  const auto dot = name.find('.');
  const std::string sec = dot == std::string::npos ? "" : name.substr(0, dot);
  const std::string key = dot == std::string::npos ? name : name.substr(dot + 1);
  for (const auto& f : config_fields())
    if (f.key == key && (sec.empty() || f.section == sec)) return f;
  throw Error(ErrorKind::Config, "unknown configuration key '" + name + "'");
}

/// Applies "key=value".
inline void apply_override(Scenario& s, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw Error(ErrorKind::Config, "override '" + kv + "' needs the form key=value");
  config_field(detail::trim(kv.substr(0, eq))).set(s, kv.substr(eq + 1));
}

inline void read_config(Scenario& s, std::istream& in, const std::string& label = "config") {
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::Config, label + ":" + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section == "scenario") continue;
      bool known = false;
      for (const auto& f : config_fields()) known = known || f.section == section;
      if (!known) throw Error(ErrorKind::Config, label + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, label + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = line.substr(eq + 1);
    if (section == "scenario" && key == "name") {
      s.name = detail::trim(value);
      continue;
    }
    if (section.empty()) throw Error(ErrorKind::Config, label + ":" + std::to_string(lineno) + ": key outside a section");
    try {
      config_field(section + "." + key).set(s, value);
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, label + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline Scenario load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config file " + path);
  Scenario s;
  read_config(s, in, path);
  return s;
}

inline std::string dump_config(const Scenario& s) {
  std::string out = "[scenario]\nname = " + s.name + "\n";
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      section = f.section;
      out += "\n[" + section + "]\n";
    }
    out += f.key + " = " + f.get(s) + "\n";
  }
  return out;
}

}  // namespace gradflow
