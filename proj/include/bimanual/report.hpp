#pragma once

#include <json.hpp>
#include <string>
#include <vector>

namespace bimanual {

/// RFC-4180 field quoting.
std::string csv_field(const std::string& s);

/// Scalar metric columns of the comparison table, in order.
const std::vector<std::string>& report_metric_columns();

struct ReportFiles {
  std::string table_csv;
  std::string mpjpe_svg;
  std::string fa_mpjpe_svg;
};

/// One row per manifest (method x metric); missing metrics are written as NA. Curves are
/// drawn from each manifest's metrics.mpjpe_curve / metrics.fa_mpjpe_curve when present.
ReportFiles build_report(const std::vector<nlohmann::json>& manifests);

/// Polyline chart of one curve per series; null entries break the line.
std::string svg_curves(const std::string& title, const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& curves);

std::string method_label(const nlohmann::json& manifest);

}  // namespace bimanual
