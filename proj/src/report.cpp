#include "bimanual/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace bimanual {

using nlohmann::json;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

const std::vector<std::string>& report_metric_columns() {
  static const std::vector<std::string> cols{"records",  "mpjpe",         "pa_mpjpe",  "fa_mpjpe",
                                             "mrrpe",    "diversity",     "gt_diversity", "multimodality"};
  return cols;
}

std::string method_label(const json& m) {
  if (m.contains("label") && m["label"].is_string() && !m["label"].get<std::string>().empty()) return m["label"];
  if (m.contains("metrics") && m["metrics"].contains("method")) return m["metrics"]["method"].get<std::string>();
  return m.value("command", std::string("unknown"));
}

namespace {

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<double> curve_of(const json& metrics, const std::string& key) {
  std::vector<double> out;
  if (!metrics.contains(key) || !metrics[key].is_array()) return out;
  for (const auto& v : metrics[key]) out.push_back(v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN());
  return out;
}

}  // namespace

std::string svg_curves(const std::string& title, const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& curves) {
  const double W = 640, H = 400, left = 60, right = 160, top = 40, bottom = 50;
  std::size_t len = 0;
  double ymax = 0.0;
  for (const auto& c : curves) {
    len = std::max(len, c.size());
    for (double v : c) {
      if (std::isfinite(v)) ymax = std::max(ymax, v);
    }
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const double pw = W - left - right, ph = H - top - bottom;
  const auto px = [&](std::size_t t) { return left + (len > 1 ? pw * static_cast<double>(t) / static_cast<double>(len - 1) : 0.0); };
  const auto py = [&](double v) { return top + ph * (1.0 - v / ymax); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' '
    << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << number(v) << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\">timestep</text>\n";
  s << "<text x=\"14\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 14 " << top + ph / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">cm</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = colors[i % 8];
    std::string pts;
    const auto flush = [&] {
      if (!pts.empty()) s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
      pts.clear();
    };
    for (std::size_t t = 0; t < curves[i].size(); ++t) {
      if (!std::isfinite(curves[i][t])) {
        flush();
        continue;
      }
      pts += (pts.empty() ? "" : " ") + number(px(t)) + "," + number(py(curves[i][t]));
    }
    flush();
    const double ly = top + 14.0 * static_cast<double>(i);
    s << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    std::string name;
    for (char c : names[i]) name += c == '<' ? std::string("&lt;") : c == '&' ? std::string("&amp;") : std::string(1, c);
    s << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << name
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

ReportFiles build_report(const std::vector<json>& manifests) {
  ReportFiles f;
  std::ostringstream csv;
  csv << "method,command";
  for (const auto& c : report_metric_columns()) csv << ',' << c;
  csv << "\r\n";
  std::vector<std::string> names;
  std::vector<std::vector<double>> mp, fa;
  for (const auto& m : manifests) {
    const json metrics = m.value("metrics", json::object());
    const std::string label = method_label(m);
    csv << csv_field(label) << ',' << csv_field(m.value("command", std::string()));
    for (const auto& c : report_metric_columns()) {
      csv << ',';
      if (metrics.contains(c) && metrics[c].is_number()) {
        csv << number(metrics[c].get<double>());
      } else {
        csv << "NA";
      }
    }
    csv << "\r\n";
    const auto a = curve_of(metrics, "mpjpe_curve"), b = curve_of(metrics, "fa_mpjpe_curve");
    if (!a.empty() || !b.empty()) {
      names.push_back(label);
      mp.push_back(a);
      fa.push_back(b);
    }
  }
  f.table_csv = csv.str();
  f.mpjpe_svg = svg_curves("MPJPE over time", names, mp);
  f.fa_mpjpe_svg = svg_curves("FA-MPJPE over time", names, fa);
  return f;
}

}  // namespace bimanual
