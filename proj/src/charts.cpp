#include "scanssc/charts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include <json.hpp>

namespace scanssc::io {

namespace {

std::string fmt(double v, const char* spec = "%.9g") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string cell(const std::optional<double>& v, const char* spec = "%.9g") {
  return v ? fmt(*v, spec) : "null";
}

nlohmann::json json_metric(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string bin_report_csv(const metrics::AxisBinReport& rep) {
  std::string out = "bin,recall,iou,miou,occupied_gt\n";
  for (size_t b = 0; b < rep.bins.size(); ++b) {
    const metrics::BinRow& row = rep.bins[b];
    out += std::to_string(b) + "," + cell(row.m.recall) + "," + cell(row.m.iou) + "," +
           cell(row.m.miou) + "," + std::to_string(row.occupied_gt) + "\n";
  }
  return out;
}

std::string segment_report_csv(const metrics::SegmentReport& rep) {
  std::string out = "segment,recall,iou,miou\n";
  for (size_t s = 0; s < rep.rows.size(); ++s) {
    const metrics::SegmentRow& row = rep.rows[s];
    out += "(" + std::to_string(s + 1) + ")," + cell(row.m.recall, "%.3f") + "," +
           cell(row.m.iou, "%.3f") + "," + cell(row.m.miou, "%.3f") + "\n";
  }
  return out;
}

std::string bin_report_json(const metrics::AxisBinReport& rep) {
  nlohmann::json j;
  j["axis"] = axis_name(rep.axis);
  j["bin_count"] = rep.bin_count;
  nlohmann::json bins = nlohmann::json::array();
  for (const metrics::BinRow& row : rep.bins) {
    nlohmann::json b;
    b["recall"] = json_metric(row.m.recall);
    b["iou"] = json_metric(row.m.iou);
    b["miou"] = json_metric(row.m.miou);
    b["occupied_gt"] = row.occupied_gt;
    bins.push_back(b);
  }
  j["bins"] = bins;
  return j.dump(2) + "\n";
}

std::string segment_report_json(const metrics::SegmentReport& rep) {
  nlohmann::json j;
  j["axis"] = axis_name(rep.axis);
  nlohmann::json rows = nlohmann::json::array();
  for (const metrics::SegmentRow& row : rep.rows) {
    nlohmann::json r;
    r["range"] = {row.range[0], row.range[1]};
    r["recall"] = json_metric(row.m.recall);
    r["iou"] = json_metric(row.m.iou);
    r["miou"] = json_metric(row.m.miou);
    r["occupied_gt"] = row.occupied_gt;
    rows.push_back(r);
  }
  j["segments"] = rows;
  return j.dump(2) + "\n";
}

std::string global_metrics_json(const metrics::MetricTriple& m, int64_t occupied_gt) {
  nlohmann::json j;
  j["recall"] = json_metric(m.recall);
  j["iou"] = json_metric(m.iou);
  j["miou"] = json_metric(m.miou);
  j["occupied_gt"] = occupied_gt;
  return j.dump(2) + "\n";
}

namespace {

struct Curve {
  const char* name;
  const char* color;
  std::vector<std::optional<double>> values;
};

std::string polyline(const Curve& c, double w, double h, double margin, double vmax) {
  const size_t n = c.values.size();
  std::string pts;
  for (size_t i = 0; i < n; ++i) {
    if (!c.values[i]) continue;
    const double frac = vmax > 0 ? *c.values[i] / vmax : 0.0;
    const double px = margin + (n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1)) * w;
    const double py = margin + h - frac * h;
    pts += fmt(px, "%.2f");
    pts += ",";
    pts += fmt(py, "%.2f");
    pts += " ";
  }
  if (pts.empty()) return "";
  return std::string("  <polyline fill=\"none\" stroke=\"") + c.color +
         "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
}

}  // namespace

std::string bin_report_svg(const metrics::AxisBinReport& rep, bool normalize) {
  const double margin = 40.0, w = 520.0, h = 220.0;
  const double width = w + 2 * margin + 110.0, height = h + 2 * margin;

  int64_t occ_max = 0;
  for (const metrics::BinRow& b : rep.bins) occ_max = std::max(occ_max, b.occupied_gt);

  std::vector<Curve> curves = {
      {"recall", "#1f77b4", {}}, {"iou", "#2ca02c", {}}, {"miou", "#d62728", {}},
      {"gt occupancy", "#9467bd", {}}};
  for (const metrics::BinRow& b : rep.bins) {
    curves[0].values.push_back(b.m.recall);
    curves[1].values.push_back(b.m.iou);
    curves[2].values.push_back(b.m.miou);
    curves[3].values.push_back(occ_max > 0 ? std::optional<double>(static_cast<double>(b.occupied_gt) /
                                                                   static_cast<double>(occ_max))
                                           : std::nullopt);
  }
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width, "%.0f") +
                    "\" height=\"" + fmt(height, "%.0f") + "\" viewBox=\"0 0 " +
                    fmt(width, "%.0f") + " " + fmt(height, "%.0f") + "\">\n";
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "  <text x=\"" + fmt(margin, "%.0f") + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">axis: " +
         std::string(axis_name(rep.axis)) + " (" + std::to_string(rep.bins.size()) + " bins" +
         (normalize ? ", per-curve normalized" : "") + ")</text>\n";
  // frame
  svg += "  <rect x=\"" + fmt(margin, "%.0f") + "\" y=\"" + fmt(margin, "%.0f") + "\" width=\"" +
         fmt(w, "%.0f") + "\" height=\"" + fmt(h, "%.0f") +
         "\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>\n";

  double legend_y = margin + 14.0;
  for (const Curve& c : curves) {
    double vmax = 1.0;
    if (normalize) {
      vmax = 0.0;
      for (const auto& v : c.values)
        if (v) vmax = std::max(vmax, *v);
      if (vmax == 0.0) vmax = 1.0;
    }
    svg += polyline(c, w, h, margin, vmax);
    svg += "  <text x=\"" + fmt(margin + w + 6, "%.0f") + "\" y=\"" + fmt(legend_y, "%.0f") +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + c.color + "\">" + c.name +
           "</text>\n";
    legend_y += 14.0;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace scanssc::io
