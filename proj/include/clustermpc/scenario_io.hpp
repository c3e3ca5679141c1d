#pragma once

/// Scenario documents, trace tables, and SVG pictures of a run.
///
/// A scenario travels as JSON with fixed top-level keys (workspace,
/// obstacles, terminal_box, x0, Ts, Ns, gamma, v_max, a_max, plus optional
/// big_m and Nc); a closed-loop trace serializes to CSV, one row per
/// executed step; render_svg draws the workspace, obstacles, executed path,
/// terminal box, and one chosen step's cluster rectangles.  All formats are
/// documented in docs/formats.md.  Everything here is deterministic:
/// identical inputs produce byte-identical output.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "clustermpc/dynamics.hpp"
#include "clustermpc/formulation.hpp"
#include "clustermpc/simulator.hpp"

namespace clustermpc {

class ScenarioIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parsed scenario document: the validated scenario plus the run inputs
/// that ride along in the file but are not part of the model itself.
struct LoadedScenario {
  Scenario scenario;
  Eigen::Vector4d x0 = Eigen::Vector4d::Zero();
  std::optional<int> preferred_nc;  // "Nc" key: 0 = unclustered, k = k clusters
};

namespace detail {

inline int line_of(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline const nlohmann::json& field(const nlohmann::json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end())
    throw ScenarioIoError(std::string("scenario document missing key '") + key + "'");
  return *it;
}

inline double number(const nlohmann::json& j, const std::string& what) {
  if (!j.is_number())
    throw ScenarioIoError("scenario key '" + what + "' must be a number");
  return j.get<double>();
}

inline Rect rect4(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 4)
    throw ScenarioIoError("scenario key '" + what +
                          "' must be an array [x_min, y_min, x_max, y_max]");
  Rect r;
  r.x_min = number(j[0], what);
  r.y_min = number(j[1], what);
  r.x_max = number(j[2], what);
  r.y_max = number(j[3], what);
  return r;
}

inline Eigen::Vector2d axis_pair(const nlohmann::json& j, const std::string& what) {
  if (j.is_number()) {
    const double v = j.get<double>();
    return {v, v};
  }
  if (j.is_array() && j.size() == 2)
    return {number(j[0], what), number(j[1], what)};
  throw ScenarioIoError("scenario key '" + what +
                        "' must be a number or an [x, y] pair");
}

// Deterministic uniform draw in [0,1): the raw engine output is used
// directly so the byte stream does not depend on the standard library's
// distribution implementation.
inline double unit_draw(std::mt19937_64& gen) {
  return double(gen() >> 11) * 0x1.0p-53;
}

inline bool rects_overlap(const Rect& a, const Rect& b) {
  return a.x_min < b.x_max && a.x_max > b.x_min && a.y_min < b.y_max &&
         a.y_max > b.y_min;
}

}  // namespace detail

/// Parse and validate a scenario document.  Syntax errors report the line;
/// missing or ill-typed keys name the field; semantic defects (inverted
/// rectangles, terminal box overlapping an obstacle, bad limits) surface
/// through scenario finalization.  Unknown top-level keys are rejected so
/// that typos cannot silently change a run.
inline LoadedScenario load_scenario(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioIoError("scenario parse error at line " +
                          std::to_string(detail::line_of(text, e.byte)) + ": " +
                          e.what());
  }
  if (!doc.is_object())
    throw ScenarioIoError("scenario document must be a JSON object");

  static const char* known[] = {"workspace", "obstacles", "terminal_box",
                                "x0",        "Ts",        "Ns",
                                "gamma",     "v_max",     "a_max",
                                "big_m",     "Nc"};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok)
      throw ScenarioIoError("scenario document has unknown key '" + it.key() + "'");
  }

  Scenario scn;
  scn.workspace = detail::rect4(detail::field(doc, "workspace"), "workspace");

  const nlohmann::json& obs = detail::field(doc, "obstacles");
  if (!obs.is_array())
    throw ScenarioIoError("scenario key 'obstacles' must be an array of rectangles");
  for (std::size_t i = 0; i < obs.size(); ++i)
    scn.obstacles.push_back(
        detail::rect4(obs[i], "obstacles[" + std::to_string(i) + "]"));

  const nlohmann::json& term = detail::field(doc, "terminal_box");
  if (term.is_object() && term.contains("lo") && term.contains("hi")) {
    const nlohmann::json& lo = term["lo"];
    const nlohmann::json& hi = term["hi"];
    if (!lo.is_array() || lo.size() != 4 || !hi.is_array() || hi.size() != 4)
      throw ScenarioIoError(
          "terminal_box lo/hi must be 4-vectors [r_x, v_x, r_y, v_y]");
    for (int c = 0; c < 4; ++c) {
      scn.terminal_box.lo[c] = detail::number(lo[c], "terminal_box.lo");
      scn.terminal_box.hi[c] = detail::number(hi[c], "terminal_box.hi");
    }
  } else if (term.is_object() && term.contains("pos") && term.contains("v_eps")) {
    const Rect p = detail::rect4(term["pos"], "terminal_box.pos");
    const double e = detail::number(term["v_eps"], "terminal_box.v_eps");
    scn.terminal_box.lo << p.x_min, -e, p.y_min, -e;
    scn.terminal_box.hi << p.x_max, e, p.y_max, e;
  } else {
    throw ScenarioIoError(
        "terminal_box must carry either lo/hi 4-vectors or pos with v_eps");
  }

  const nlohmann::json& x0j = detail::field(doc, "x0");
  if (!x0j.is_array() || x0j.size() != 4)
    throw ScenarioIoError("scenario key 'x0' must be a 4-vector [r_x, v_x, r_y, v_y]");
  LoadedScenario out;
  for (int c = 0; c < 4; ++c) out.x0[c] = detail::number(x0j[c], "x0");
  if (!out.x0.allFinite())
    throw ScenarioIoError("scenario key 'x0' must contain finite numbers");

  const double ts = detail::number(detail::field(doc, "Ts"), "Ts");
  const nlohmann::json& nsj = detail::field(doc, "Ns");
  if (!nsj.is_number_integer())
    throw ScenarioIoError("scenario key 'Ns' must be an integer");
  scn.max_horizon = nsj.get<int>();
  scn.gamma = detail::number(detail::field(doc, "gamma"), "gamma");
  scn.v_max = detail::axis_pair(detail::field(doc, "v_max"), "v_max");
  scn.a_max = detail::axis_pair(detail::field(doc, "a_max"), "a_max");

  if (doc.contains("big_m")) {
    const nlohmann::json& bm = doc["big_m"];
    if (!bm.is_object())
      throw ScenarioIoError("scenario key 'big_m' must be an object");
    for (auto it = bm.begin(); it != bm.end(); ++it) {
      const double v = detail::number(it.value(), "big_m." + it.key());
      if (it.key() == "obstacle")
        scn.big_m.obstacle = v;
      else if (it.key() == "cluster")
        scn.big_m.cluster = v;
      else if (it.key() == "contain")
        scn.big_m.contain = v;
      else if (it.key() == "terminal")
        scn.big_m.terminal = v;
      else
        throw ScenarioIoError("big_m has unknown key '" + it.key() + "'");
    }
  }

  if (doc.contains("Nc")) {
    const nlohmann::json& ncj = doc["Nc"];
    if (!ncj.is_number_integer() || ncj.get<int>() < 0)
      throw ScenarioIoError("scenario key 'Nc' must be a nonnegative integer");
    out.preferred_nc = ncj.get<int>();
  }

  if (!(ts > 0.0) || !std::isfinite(ts))
    throw ScenarioIoError("scenario key 'Ts' must be positive and finite");
  scn.dynamics = zoh_discretize(double_integrator_2d(), ts);
  out.scenario = finalize_scenario(std::move(scn));
  return out;
}

/// Fixed column set of the trace CSV; docs/formats.md is the authority.
inline constexpr const char* kTraceHeader =
    "k,r_x,v_x,r_y,v_y,a_x,a_y,J_star,J_hat_next,solve_time,nodes,"
    "assignment_changed";

namespace detail {

// 17 significant digits: enough that strtod reads back the identical double.
inline std::string num17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// One CSV row per executed step, header first.  Aggregates of the run
/// (closed-loop cost, status) are derived data and do not travel.
inline std::string write_trace(const Trace& trace) {
  std::string out = kTraceHeader;
  out += '\n';
  for (const StepRecord& s : trace.steps) {
    out += std::to_string(s.k);
    for (int c = 0; c < 4; ++c) out += ',' + detail::num17(s.state[c]);
    for (int c = 0; c < 2; ++c) out += ',' + detail::num17(s.applied_control[c]);
    out += ',' + detail::num17(s.j_star);
    out += ',' + detail::num17(s.j_hat_next);
    out += ',' + detail::num17(s.solve_time);
    out += ',' + std::to_string(s.nodes_explored);
    out += s.assignment_changed ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

/// Inverse of write_trace over the per-step fields.  Run aggregates are left
/// at their defaults; cluster snapshots do not travel through CSV.
inline Trace read_trace(const std::string& text) {
  Trace trace;
  std::size_t pos = 0;
  int line = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string row = text.substr(pos, end - pos);
    pos = end + 1;
    ++line;
    if (line == 1) {
      if (row != kTraceHeader)
        throw ScenarioIoError("trace header mismatch: got '" + row + "'");
      continue;
    }
    if (row.empty()) continue;
    std::vector<std::string> cells;
    std::size_t c = 0;
    while (true) {
      std::size_t comma = row.find(',', c);
      cells.push_back(row.substr(c, comma == std::string::npos ? comma : comma - c));
      if (comma == std::string::npos) break;
      c = comma + 1;
    }
    if (cells.size() != 12)
      throw ScenarioIoError("trace line " + std::to_string(line) + " has " +
                            std::to_string(cells.size()) + " fields, expected 12");
    auto num = [&](const std::string& cell) {
      char* stop = nullptr;
      const double v = std::strtod(cell.c_str(), &stop);
      if (stop == cell.c_str() || *stop != '\0')
        throw ScenarioIoError("trace line " + std::to_string(line) +
                              " has a malformed number '" + cell + "'");
      return v;
    };
    StepRecord s;
    s.k = int(num(cells[0]));
    for (int i = 0; i < 4; ++i) s.state[i] = num(cells[1 + i]);
    for (int i = 0; i < 2; ++i) s.applied_control[i] = num(cells[5 + i]);
    s.j_star = num(cells[7]);
    s.j_hat_next = num(cells[8]);
    s.solve_time = num(cells[9]);
    s.nodes_explored = long(num(cells[10]));
    if (cells[11] != "0" && cells[11] != "1")
      throw ScenarioIoError("trace line " + std::to_string(line) +
                            " has assignment_changed '" + cells[11] +
                            "', expected 0 or 1");
    s.assignment_changed = cells[11] == "1";
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

struct RenderOptions {
  int cluster_step = -1;      // step whose cluster rectangles to draw; -1 = none
  double px_per_meter = 60.0; // viewport scale
  double margin = 0.5;        // meters of breathing room around the workspace
};

namespace detail {

// Pixel coordinates with two decimals: deterministic and plenty for SVG.
inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

/// Draw the scenario and an executed trace as a standalone SVG 1.1 document.
/// Obstacles are filled rectangles, the terminal box an outlined one, the
/// path a polyline with one marker circle per step; when cluster_step names
/// a step carrying cluster data, that step's cluster rectangles appear as
/// dashed outlines.  Every element has a stable id.  An empty trace yields
/// just the scene.  Throws when cluster_step is outside the trace.
inline std::string render_svg(const Scenario& scn, const Trace& trace,
                              const RenderOptions& opts = {}) {
  if (opts.cluster_step != -1 &&
      (opts.cluster_step < 0 || opts.cluster_step >= int(trace.steps.size())))
    throw ScenarioIoError("cluster_step " + std::to_string(opts.cluster_step) +
                          " is outside the trace (0.." +
                          std::to_string(int(trace.steps.size()) - 1) + ")");

  const Rect& ws = scn.workspace;
  const double s = opts.px_per_meter;
  const double m = opts.margin;
  const double w = (ws.span_x() + 2 * m) * s;
  const double h = (ws.span_y() + 2 * m) * s;
  auto X = [&](double x) { return (x - ws.x_min + m) * s; };
  auto Y = [&](double y) { return (ws.y_max + m - y) * s; };  // SVG y runs down

  std::string svg;
  auto rect = [&](const std::string& id, const Rect& r, const char* style) {
    svg += "  <rect id=\"" + id + "\" x=\"" + detail::px(X(r.x_min)) + "\" y=\"" +
           detail::px(Y(r.y_max)) + "\" width=\"" + detail::px(r.span_x() * s) +
           "\" height=\"" + detail::px(r.span_y() * s) + "\" " + style + "/>\n";
  };

  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
         detail::px(w) + "\" height=\"" + detail::px(h) + "\" viewBox=\"0 0 " +
         detail::px(w) + ' ' + detail::px(h) + "\">\n";
  svg += "  <rect id=\"background\" x=\"0\" y=\"0\" width=\"" + detail::px(w) +
         "\" height=\"" + detail::px(h) + "\" fill=\"#ffffff\"/>\n";
  rect("workspace", ws, "fill=\"none\" stroke=\"#202124\" stroke-width=\"2\"");
  for (std::size_t i = 0; i < scn.obstacles.size(); ++i)
    rect("obstacle-" + std::to_string(i), scn.obstacles[i],
         "fill=\"#9aa0a6\" stroke=\"#5f6368\" stroke-width=\"1\"");
  {
    Rect t{scn.terminal_box.lo[0], scn.terminal_box.lo[2], scn.terminal_box.hi[0],
           scn.terminal_box.hi[2]};
    rect("terminal", t,
         "fill=\"#e6f4ea\" stroke=\"#188038\" stroke-width=\"2\"");
  }
  if (opts.cluster_step != -1) {
    const StepRecord& snap = trace.steps[opts.cluster_step];
    if (snap.cluster_info)
      for (std::size_t l = 0; l < snap.cluster_info->clusters.size(); ++l)
        rect("cluster-" + std::to_string(l), snap.cluster_info->clusters[l],
             "fill=\"none\" stroke=\"#d93025\" stroke-width=\"2\" "
             "stroke-dasharray=\"6 4\"");
  }
  if (!trace.steps.empty()) {
    svg += "  <polyline id=\"path\" points=\"";
    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
      if (k) svg += ' ';
      svg += detail::px(X(trace.steps[k].state[0])) + ',' +
             detail::px(Y(trace.steps[k].state[2]));
    }
    svg += "\" fill=\"none\" stroke=\"#1a73e8\" stroke-width=\"2\"/>\n";
    for (std::size_t k = 0; k < trace.steps.size(); ++k)
      svg += "  <circle id=\"step-" + std::to_string(k) + "\" cx=\"" +
             detail::px(X(trace.steps[k].state[0])) + "\" cy=\"" +
             detail::px(Y(trace.steps[k].state[2])) +
             "\" r=\"3\" fill=\"#1a73e8\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// Deterministically synthesize a clutter field: `count` axis-aligned
/// obstacles inside the workspace, none intersecting any keep-out rectangle
/// (inflated by `clearance`).  Obstacles may overlap each other.  The draw
/// sequence depends only on the arguments, not on the platform's
/// distribution implementation.  Throws when the field cannot be placed.
inline std::vector<Rect> gen_obstacle_field(const Rect& workspace, int count,
                                            std::uint64_t seed,
                                            const std::vector<Rect>& keep_outs,
                                            double min_size = 0.5,
                                            double max_size = 1.6,
                                            double clearance = 0.3) {
  if (count < 0) throw ScenarioIoError("obstacle count must be nonnegative");
  if (!(min_size > 0.0) || max_size < min_size)
    throw ScenarioIoError("obstacle size range is empty or nonpositive");
  if (workspace.span_x() < max_size || workspace.span_y() < max_size)
    throw ScenarioIoError("workspace is smaller than the largest obstacle");
  std::mt19937_64 gen(seed);
  std::vector<Rect> out;
  long attempts = 200L * std::max(count, 1);
  while (int(out.size()) < count) {
    if (attempts-- <= 0)
      throw ScenarioIoError(
          "could not place the obstacle field; workspace too crowded");
    const double sx = min_size + (max_size - min_size) * detail::unit_draw(gen);
    const double sy = min_size + (max_size - min_size) * detail::unit_draw(gen);
    const double cx = workspace.x_min + sx / 2 +
                      (workspace.span_x() - sx) * detail::unit_draw(gen);
    const double cy = workspace.y_min + sy / 2 +
                      (workspace.span_y() - sy) * detail::unit_draw(gen);
    Rect o{cx - sx / 2, cy - sy / 2, cx + sx / 2, cy + sy / 2};
    bool blocked = false;
    for (const Rect& k : keep_outs) {
      Rect grown{k.x_min - clearance, k.y_min - clearance, k.x_max + clearance,
                 k.y_max + clearance};
      blocked = blocked || detail::rects_overlap(o, grown);
    }
    if (!blocked) out.push_back(o);
  }
  return out;
}

}  // namespace clustermpc
