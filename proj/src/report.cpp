#include "moeamc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "moeamc/io_util.hpp"

namespace moeamc {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

SnrMetrics accuracy_by_snr(const std::vector<std::size_t>& predictions, const Dataset& ds,
                           const std::vector<double>& gate) {
  if (predictions.size() != ds.examples.size()) {
    throw ValidationError("accuracy_by_snr: predictions/examples misaligned");
  }
  if (!gate.empty() && gate.size() != predictions.size()) {
    throw ValidationError("accuracy_by_snr: gate/examples misaligned");
  }
  SnrMetrics m;
  m.n_classes = ds.spec.schemes.size();
  m.has_gate = !gate.empty();
  m.confusion.assign(m.n_classes * m.n_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& ex = ds.examples[i];
    if (ex.class_idx >= m.n_classes || predictions[i] >= m.n_classes) {
      throw ValidationError("accuracy_by_snr: class index out of range");
    }
    SnrBin& bin = m.per_snr[static_cast<double>(ex.snr_db)];
    ++bin.total;
    if (predictions[i] == ex.class_idx) ++bin.correct;
    if (m.has_gate) bin.gate_sum += gate[i];
    ++m.confusion[ex.class_idx * m.n_classes + predictions[i]];
  }
  return m;
}

double average_accuracy(const SnrMetrics& m) {
  if (m.per_snr.empty()) throw ValidationError("average_accuracy: no SNR bins");
  double acc = 0.0;
  for (const auto& [snr, bin] : m.per_snr) acc += bin.accuracy();
  return acc / static_cast<double>(m.per_snr.size());
}

double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ValidationError("spearman: need two equal-length series of size >= 2");
  }
  auto ranks = [](const std::vector<double>& v) {
    std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * static_cast<double>(i + j);  // average rank for the tie group
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    double da = ra[i] - ma, db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string render_svg(const std::vector<std::pair<std::string, SnrMetrics>>& models,
                       const std::vector<double>& grid) {
  const double x0 = 60, x1 = 620, y0 = 20, y1 = 450;
  double smin = grid.front(), smax = grid.back();
  double srange = smax > smin ? smax - smin : 1.0;
  auto px = [&](double snr) { return x0 + (snr - smin) / srange * (x1 - x0); };
  auto py = [&](double acc) { return y1 - acc * (y1 - y0); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\">\n";
  s += "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  // axes
  s += "<line x1=\"" + fmt("%.2f", x0) + "\" y1=\"" + fmt("%.2f", y1) + "\" x2=\"" +
       fmt("%.2f", x1) + "\" y2=\"" + fmt("%.2f", y1) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt("%.2f", x0) + "\" y1=\"" + fmt("%.2f", y0) + "\" x2=\"" +
       fmt("%.2f", x0) + "\" y2=\"" + fmt("%.2f", y1) + "\" stroke=\"black\"/>\n";
  for (double g : grid) {
    double x = px(g);
    s += "<line x1=\"" + fmt("%.2f", x) + "\" y1=\"" + fmt("%.2f", y1) + "\" x2=\"" +
         fmt("%.2f", x) + "\" y2=\"" + fmt("%.2f", y1 + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", y1 + 18) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + fmt("%g", g) + "</text>\n";
  }
  for (int i = 0; i <= 10; ++i) {
    double a = i / 10.0;
    double y = py(a);
    s += "<line x1=\"" + fmt("%.2f", x0 - 5) + "\" y1=\"" + fmt("%.2f", y) + "\" x2=\"" +
         fmt("%.2f", x0) + "\" y2=\"" + fmt("%.2f", y) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt("%.2f", x0 - 9) + "\" y=\"" + fmt("%.2f", y + 4) +
         "\" font-size=\"11\" text-anchor=\"end\">" + fmt("%.1f", a) + "</text>\n";
  }
  s += "<text x=\"" + fmt("%.2f", (x0 + x1) / 2) +
       "\" y=\"488\" font-size=\"12\" text-anchor=\"middle\">SNR (dB)</text>\n";
  s += "<text x=\"14\" y=\"" + fmt("%.2f", (y0 + y1) / 2) +
       "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       fmt("%.2f", (y0 + y1) / 2) + ")\">accuracy</text>\n";

  std::size_t mi = 0;
  for (const auto& [name, metrics] : models) {
    const char* color = kPalette[mi % 8];
    std::string pts;
    for (const auto& [snr, bin] : metrics.per_snr) {
      if (!pts.empty()) pts += " ";
      pts += fmt("%.2f", px(snr)) + "," + fmt("%.2f", py(bin.accuracy()));
    }
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    double ly = 40.0 + 20.0 * static_cast<double>(mi);
    s += "<line x1=\"650\" y1=\"" + fmt("%.2f", ly) + "\" x2=\"680\" y2=\"" + fmt("%.2f", ly) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"686\" y=\"" + fmt("%.2f", ly + 4) + "\" font-size=\"12\">" + name +
         "</text>\n";
    ++mi;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace

void emit_report(const std::vector<std::pair<std::string, SnrMetrics>>& models,
                 const std::string& out_dir) {
  if (models.empty()) throw ValidationError("emit_report: no metrics");
  std::vector<double> grid;
  for (const auto& [snr, bin] : models.front().second.per_snr) grid.push_back(snr);
  if (grid.empty()) throw ValidationError("emit_report: no SNR bins");
  for (const auto& [name, m] : models) {
    bool same = m.per_snr.size() == grid.size();
    if (same) {
      for (double g : grid) same = same && m.per_snr.count(g) == 1;
    }
    if (!same) throw ValidationError("emit_report: models disagree on SNR bins");
  }
  std::filesystem::create_directories(out_dir);

  const SnrMetrics* gated = nullptr;
  for (const auto& [name, m] : models) {
    if (m.has_gate) gated = &m;
  }

  std::string acc = "snr_db";
  for (const auto& [name, m] : models) acc += "," + name;
  if (gated) acc += ",moe_gate_mean";
  acc += "\n";
  for (double g : grid) {
    acc += fmt("%g", g);
    for (const auto& [name, m] : models) acc += "," + fmt("%.6f", m.per_snr.at(g).accuracy());
    if (gated) acc += "," + fmt("%.6f", gated->per_snr.at(g).gate_mean());
    acc += "\n";
  }
  write_file_text(out_dir + "/accuracy_by_snr.csv", acc);

  for (const auto& [name, m] : models) {
    std::string cm = "true_class";
    for (std::size_t k = 0; k < m.n_classes; ++k) cm += ",pred_" + std::to_string(k);
    cm += "\n";
    for (std::size_t r = 0; r < m.n_classes; ++r) {
      cm += std::to_string(r);
      for (std::size_t c = 0; c < m.n_classes; ++c) {
        cm += "," + std::to_string(m.confusion[r * m.n_classes + c]);
      }
      cm += "\n";
    }
    write_file_text(out_dir + "/confusion_" + name + ".csv", cm);
  }

  std::string sum = "model,avg_accuracy\n";
  for (const auto& [name, m] : models) {
    sum += name + "," + fmt("%.6f", average_accuracy(m)) + "\n";
  }
  write_file_text(out_dir + "/summary.csv", sum);

  write_file_text(out_dir + "/accuracy_by_snr.svg", render_svg(models, grid));
}

}  // namespace moeamc
