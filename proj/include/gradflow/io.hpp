#pragma once

// Text outputs. Numbers go through fmt, so the decimal separator is always '.'
// and every value round-trips.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gradflow/experiments.hpp"

namespace gradflow::io {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorKind::Config, "cannot write " + p.string());
  return f;
}

inline std::string num(double x) { return fmt::format("{}", x); }

inline void write_trajectory(const fs::path& p, const Trajectory& tr) {
  auto f = open_out(p);
  for (std::size_t i = 0; i < tr.columns.size(); ++i) f << (i ? "," : "") << tr.columns[i];
  f << "\n";
  for (const auto& r : tr.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << num(r[i]);
    f << "\n";
  }
}

inline void write_escape_track(const fs::path& p, const std::vector<EscapeRow>& rows) {
  auto f = open_out(p);
  f << "t,i,side,x,transversality\n";
  for (const auto& r : rows)
    f << num(r.t) << "," << r.i << "," << (r.side < 0 ? "-" : "+") << "," << num(r.x) << "," << num(r.transversality) << "\n";
}

inline void write_terrace(const fs::path& p, const TerraceTracker& tr, const ConnectionSet& lib) {
  auto f = open_out(p);
  f << "t,q,items,positions,residual,energy\n";
  for (const auto& s : tr.snapshots()) {
    if (!s.dec) {
      f << num(s.t) << ",-1,,,,\n";
      continue;
    }
    std::string ids, xs;
    for (std::size_t i = 0; i < s.dec->items.size(); ++i) {
      ids += (i ? ";" : "") + s.dec->items[i].id;
      xs += (i ? ";" : "") + num(s.dec->items[i].position);
    }
    f << num(s.t) << "," << s.dec->q << "," << ids << "," << xs << "," << num(s.dec->residual) << ","
      << num(terrace_energy(*s.dec, lib).total) << "\n";
  }
}

inline void write_events(const fs::path& p, const std::vector<TopologyChange>& ev) {
  auto f = open_out(p);
  for (const auto& e : ev) f << num(e.t) << " TOPOLOGY_CHANGE " << e.q_old << " " << e.q_new << "\n";
}

inline std::string profile_name(double t) { return "profile_t" + fmt::format("{:.6f}", t) + ".dat"; }

inline void write_profile(const fs::path& p, const Profile& u) {
  auto f = open_out(p);
  for (int i = 0; i < u.grid.N; ++i) {
    f << num(u.grid.x(i));
    for (int c = 0; c < u.n; ++c) f << " " << num(u(i, c));
    f << "\n";
  }
}

inline void write_stationary(const fs::path& p, const StationaryProfile& sp) {
  auto f = open_out(p);
  const auto& o = sp.orbit;
  for (int k = 0; k < o.size(); ++k) {
    f << num(o.x(k));
    for (int c = 0; c < o.u[k].size(); ++c) f << " " << num(o.u[k][c]) << " " << num(o.up[k][c]);
    f << "\n";
  }
}

inline std::string vec_text(const Vec& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) s += (i ? ";" : "") + num(v[i]);
  return s;
}

inline void write_connections(const fs::path& dir, const ConnectionSet& set) {
  auto f = open_out(dir / "connections.csv");
  f << "id,m_minus,m_plus,energy,hamiltonian_drift\n";
  for (const auto& p : set.profiles) {
    f << p.id << "," << vec_text(p.m_minus_pt) << "," << vec_text(p.m_plus_pt) << "," << num(p.energy) << ","
      << num(p.hamiltonian_drift) << "\n";
    write_stationary(dir / ("stationary_" + p.id + ".dat"), p);
  }
}

inline nlohmann::json to_json(const ReportRecord& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["expected"] = r.expected;
  if (std::isfinite(r.observed)) j["observed"] = r.observed;
  else j["observed"] = num(r.observed);
  j["tolerance"] = r.tolerance;
  j["pass"] = r.pass;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline void write_report(const fs::path& p, const std::vector<ReportRecord>& recs, const nlohmann::json& extra = {}) {
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const auto& r : recs) j["records"].push_back(to_json(r));
  bool ok = true;
  for (const auto& r : recs) ok = ok && r.pass;
  j["pass"] = ok;
  if (!extra.is_null()) j["details"] = extra;
  auto f = open_out(p);
  f << j.dump(2) << "\n";
}

}  // namespace gradflow::io
