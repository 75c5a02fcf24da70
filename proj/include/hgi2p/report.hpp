#pragma once

// Evaluation reports: per-scene CSV rows, aggregate summary, optional SVG chart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hgi2p/model_io.hpp"

namespace hgi2p {

inline constexpr const char* kReportColumns = "scene,status,correspondences,kept,ir_pre,ir_post,rte,rre,error";

struct ReportRow {
  std::uint64_t scene = 0;
  bool ok = false;
  std::size_t correspondences = 0;
  std::size_t kept = 0;
  double ir_pre = 0.0;
  double ir_post = 0.0;
  double rte = 0.0;
  double rre = 0.0;
  std::string error;  // failure message, empty when ok
};

struct ReportSummary {
  std::size_t scenes = 0;
  std::size_t failed = 0;
  double mean_ir_pre = 0.0;   // over successful scenes
  double mean_ir_post = 0.0;
  double mean_rte = 0.0;
  double mean_rre = 0.0;
  std::vector<std::pair<double, double>> recall;  // (threshold, RR over all scenes)
};

/// Failed scenes count as not registered; means run over successful scenes.
inline ReportSummary summarize(const std::vector<ReportRow>& rows, const std::vector<double>& thresholds) {
  ReportSummary s;
  s.scenes = rows.size();
  std::size_t ok = 0;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++s.failed;
      continue;
    }
    ++ok;
    s.mean_ir_pre += r.ir_pre;
    s.mean_ir_post += r.ir_post;
    s.mean_rte += r.rte;
    s.mean_rre += r.rre;
  }
  if (ok > 0) {
    const auto n = static_cast<double>(ok);
    s.mean_ir_pre /= n;
    s.mean_ir_post /= n;
    s.mean_rte /= n;
    s.mean_rre /= n;
  }
  for (double t : thresholds) {
    const auto hits = std::count_if(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.ok && r.rte <= t; });
    s.recall.emplace_back(t, rows.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(rows.size()));
  }
  return s;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace detail

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << kReportColumns << '\n';
  for (const auto& r : rows) {
    out << r.scene << ',' << (r.ok ? "ok" : "failed") << ',' << r.correspondences << ',' << r.kept << ','
        << detail::format_double(r.ir_pre) << ',' << detail::format_double(r.ir_post) << ',';
    if (r.ok) out << detail::format_double(r.rte) << ',' << detail::format_double(r.rre);
    else out << ',';
    out << ',' << detail::csv_escape(r.error) << '\n';
  }
  return out.str();
}

inline std::string report_summary(const ReportSummary& s, const std::map<std::string, std::string>& config) {
  std::ostringstream out;
  out << "scenes " << s.scenes << '\n'
      << "failed " << s.failed << '\n'
      << "mean_ir_pre " << detail::format_double(s.mean_ir_pre) << '\n'
      << "mean_ir_post " << detail::format_double(s.mean_ir_post) << '\n'
      << "mean_rte " << detail::format_double(s.mean_rte) << '\n'
      << "mean_rre " << detail::format_double(s.mean_rre) << '\n';
  for (const auto& [t, rr] : s.recall) out << "rr@" << detail::format_double(t) << ' ' << detail::format_double(rr) << '\n';
  for (const auto& [k, v] : config) out << "config." << k << ' ' << v << '\n';
  return out.str();
}

/// Grouped bars of IR before and after pruning, one group per scene.
inline std::string report_svg(const std::vector<ReportRow>& rows) {
  const double bar = 12.0;
  const double gap = 10.0;
  const double height = 200.0;
  const double left = 40.0;
  const double width = left + static_cast<double>(rows.size()) * (2 * bar + gap) + gap;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + 40 << "\">\n"
      << "<line x1=\"" << left << "\" y1=\"10\" x2=\"" << left << "\" y2=\"" << height + 10
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"4\" y=\"16\" font-size=\"10\">1.0</text>\n"
      << "<text x=\"4\" y=\"" << height + 10 << "\" font-size=\"10\">0.0</text>\n";
  double x = left + gap;
  for (const auto& r : rows) {
    const double values[2] = {r.ok ? r.ir_pre : 0.0, r.ok ? r.ir_post : 0.0};
    const char* colors[2] = {"#9ab", "#357"};
    for (int b = 0; b < 2; ++b) {
      const double h = std::clamp(values[b], 0.0, 1.0) * height;
      out << "<rect x=\"" << x + b * bar << "\" y=\"" << height + 10 - h << "\" width=\"" << bar << "\" height=\"" << h
          << "\" fill=\"" << colors[b] << "\"/>\n";
    }
    out << "<text x=\"" << x << "\" y=\"" << height + 25 << "\" font-size=\"9\">" << r.scene << "</text>\n";
    x += 2 * bar + gap;
  }
  out << "<text x=\"" << left << "\" y=\"" << height + 38 << "\" font-size=\"10\">IR before (light) and after (dark) pruning</text>\n"
      << "</svg>\n";
  return out.str();
}

}  // namespace hgi2p
