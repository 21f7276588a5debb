#include "stcvae/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "stcvae/errors.hpp"

namespace stcvae {

namespace {

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Frame {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  static constexpr double kW = 720, kH = 480, kLeft = 70, kRight = 150, kTop = 30, kBottom = 60;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string render_svg(const std::vector<TrialRecord>& ok, const std::vector<TrajectoryCurve>& curves,
                       double baseline) {
  Frame f;
  double cmin = std::numeric_limits<double>::infinity(), cmax = -cmin, gmax = baseline;
  for (const auto& r : ok) {
    cmin = std::min(cmin, static_cast<double>(r.neuron_num));
    cmax = std::max(cmax, static_cast<double>(r.neuron_num));
    gmax = std::max(gmax, r.g.value());
  }
  const double pad = cmax > cmin ? 0.05 * (cmax - cmin) : 1.0;
  f.x0 = cmin - pad;
  f.x1 = cmax + pad;
  f.y0 = 0.0;
  f.y1 = std::max(1.0, gmax) * 1.05;

  std::map<double, std::size_t> beta_index;
  for (const auto& c : curves) beta_index.emplace(c.beta, beta_index.size());
  auto color = [&](double beta) {
    const auto it = beta_index.find(beta);
    return kPalette[(it == beta_index.end() ? 0 : it->second) % std::size(kPalette)];
  };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(Frame::kW, 0) << "\" height=\""
    << fixed(Frame::kH, 0) << "\" viewBox=\"0 0 " << fixed(Frame::kW, 0) << ' ' << fixed(Frame::kH, 0) << "\">\n";
  s << "<style>text{font-family:sans-serif;font-size:12px}.trial{fill-opacity:0.35}"
       ".fit{fill:none;stroke-width:2}.baseline{stroke:#555;stroke-dasharray:6 4}</style>\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << fixed(Frame::kW, 0) << "\" height=\"" << fixed(Frame::kH, 0)
    << "\" fill=\"white\"/>\n";

  // axes and ticks
  const double ax0 = f.px(f.x0), ax1 = f.px(f.x1), ay0 = f.py(f.y0), ay1 = f.py(f.y1);
  s << "<line class=\"axis\" x1=\"" << fixed(ax0) << "\" y1=\"" << fixed(ay0) << "\" x2=\"" << fixed(ax1)
    << "\" y2=\"" << fixed(ay0) << "\" stroke=\"black\"/>\n";
  s << "<line class=\"axis\" x1=\"" << fixed(ax0) << "\" y1=\"" << fixed(ay0) << "\" x2=\"" << fixed(ax0)
    << "\" y2=\"" << fixed(ay1) << "\" stroke=\"black\"/>\n";
  std::set<std::size_t> caps;
  for (const auto& r : ok) caps.insert(r.neuron_num);
  for (std::size_t c : caps) {
    const double x = f.px(static_cast<double>(c));
    s << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(ay0 + 18) << "\" text-anchor=\"middle\">" << c << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double g = f.y1 * i / 5.0;
    s << "<text x=\"" << fixed(ax0 - 8) << "\" y=\"" << fixed(f.py(g) + 4) << "\" text-anchor=\"end\">"
      << fixed(g) << "</text>\n";
  }
  s << "<text x=\"" << fixed((ax0 + ax1) / 2) << "\" y=\"" << fixed(Frame::kH - 15)
    << "\" text-anchor=\"middle\">network capacity (neurons per layer)</text>\n";
  s << "<text x=\"18\" y=\"" << fixed((ay0 + ay1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << fixed((ay0 + ay1) / 2) << ")\">granularity</text>\n";

  for (const auto& r : ok) {
    s << "<circle class=\"trial\" cx=\"" << fixed(f.px(static_cast<double>(r.neuron_num))) << "\" cy=\""
      << fixed(f.py(r.g.value())) << "\" r=\"4\" fill=\"" << color(r.beta) << "\"/>\n";
  }

  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      const double x = f.px(static_cast<double>(p.capacity)), y = f.py(p.mean_best_g);
      s << "<rect class=\"optimal\" x=\"" << fixed(x - 5) << "\" y=\"" << fixed(y - 5)
        << "\" width=\"10\" height=\"10\" fill=\"none\" stroke=\"" << color(c.beta) << "\"/>\n";
    }
    if (c.points.size() < 2) continue;
    std::ostringstream d;
    if (c.fit) {
      const double lo = static_cast<double>(c.points.front().capacity);
      const double hi = static_cast<double>(c.points.back().capacity);
      constexpr int kSteps = 64;
      for (int i = 0; i <= kSteps; ++i) {
        const double cap = lo + (hi - lo) * i / kSteps;
        const double g = c.fit->a * cap * cap + c.fit->b * cap + c.fit->c;
        d << (i == 0 ? "M" : " L") << fixed(f.px(cap)) << ' ' << fixed(f.py(g));
      }
    } else {
      for (std::size_t i = 0; i < c.points.size(); ++i)
        d << (i == 0 ? "M" : " L") << fixed(f.px(static_cast<double>(c.points[i].capacity))) << ' '
          << fixed(f.py(c.points[i].mean_best_g));
    }
    s << "<path class=\"fit\" data-beta=\"" << fixed(c.beta, 4) << "\" d=\"" << d.str() << "\" stroke=\""
      << color(c.beta) << "\"/>\n";
  }

  s << "<line class=\"baseline\" x1=\"" << fixed(ax0) << "\" y1=\"" << fixed(f.py(baseline)) << "\" x2=\""
    << fixed(ax1) << "\" y2=\"" << fixed(f.py(baseline)) << "\"/>\n";

  // legend
  double ly = Frame::kTop + 10;
  const double lx = Frame::kW - Frame::kRight + 20;
  for (const auto& c : curves) {
    s << "<line x1=\"" << fixed(lx) << "\" y1=\"" << fixed(ly) << "\" x2=\"" << fixed(lx + 20) << "\" y2=\""
      << fixed(ly) << "\" stroke=\"" << color(c.beta) << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << fixed(lx + 26) << "\" y=\"" << fixed(ly + 4) << "\">beta " << fixed(c.beta, 3)
      << "</text>\n";
    ly += 18;
  }
  s << "<line class=\"baseline\" x1=\"" << fixed(lx) << "\" y1=\"" << fixed(ly) << "\" x2=\"" << fixed(lx + 20)
    << "\" y2=\"" << fixed(ly) << "\"/>\n";
  s << "<text x=\"" << fixed(lx + 26) << "\" y=\"" << fixed(ly + 4) << "\">baseline g</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string render_region_table(const std::vector<RegionCell>& cells, double threshold) {
  std::set<std::pair<double, std::size_t>> rows;
  std::map<double, Granularity> cols;
  std::map<std::tuple<double, std::size_t, double>, const RegionCell*> at;
  for (const auto& c : cells) {
    rows.insert({c.beta, c.capacity});
    cols.emplace(c.g.value(), c.g);
    at[{c.beta, c.capacity, c.g.value()}] = &c;
  }
  std::ostringstream s;
  s << "collapsed-latent occurrence (flagged/trials, * = fraction >= " << fixed(threshold) << ")\n";
  s << "beta      capacity";
  for (const auto& [v, g] : cols) s << "  g=" << fixed(v, 4);
  s << '\n';
  for (const auto& [beta, cap] : rows) {
    char head[64];
    std::snprintf(head, sizeof head, "%-9s %-8zu", fixed(beta, 3).c_str(), cap);
    s << head;
    for (const auto& [v, g] : cols) {
      const auto it = at.find({beta, cap, v});
      char cell[32];
      if (it == at.end())
        std::snprintf(cell, sizeof cell, "  %-8s", "-");
      else
        std::snprintf(cell, sizeof cell, "  %zu/%zu%s", it->second->flagged, it->second->trials,
                      it->second->in_region ? "*" : "");
      std::string c = cell;
      c.resize(std::max<std::size_t>(c.size(), 10), ' ');
      s << c;
    }
    s << '\n';
  }
  return s.str();
}

}  // namespace

SweepReport build_report(const std::vector<TrialRecord>& records, double region_threshold) {
  std::vector<TrialRecord> ok;
  for (const auto& r : records)
    if (r.ok()) ok.push_back(r);
  if (ok.empty()) throw ReportError("no successful trials to report");

  SweepReport rep;
  std::map<double, TrajectoryCurve> by_beta;
  for (const auto& p : optimal_granularity_points(ok)) {
    auto& c = by_beta[p.beta];
    c.beta = p.beta;
    c.points.push_back(p);
  }
  std::ostringstream fits;
  for (auto& [beta, c] : by_beta) {
    std::sort(c.points.begin(), c.points.end(),
              [](const OptimalPoint& a, const OptimalPoint& b) { return a.capacity < b.capacity; });
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : c.points) xy.emplace_back(static_cast<double>(p.capacity), p.mean_best_g);
    fits << "beta " << fixed(beta, 3) << ":";
    for (const auto& p : c.points)
      fits << " (" << p.capacity << ", " << fixed(p.mean_best_g, 4) << " | mean-elbo argmax "
           << fixed(p.best_mean_elbo_g, 4) << ")";
    try {
      c.fit = fit_trajectory_curve(xy);
      char buf[160];
      std::snprintf(buf, sizeof buf, "  fit g = %.6g*cap^2 + %.6g*cap + %.6g, residual %.4g", c.fit->a, c.fit->b,
                    c.fit->c, c.fit->residual_norm);
      fits << buf;
    } catch (const FitError&) {
      fits << "  (fewer than 3 capacities, no quadratic fit)";
    }
    fits << '\n';
    rep.curves.push_back(c);
  }
  rep.fit_summary = fits.str();

  rep.region = omniscient_region(ok, region_threshold);
  rep.region_table = render_region_table(rep.region, region_threshold);

  rep.baseline = baseline_granularity(ok);
  std::set<std::size_t> ns;
  for (const auto& r : ok) ns.insert(r.n);
  std::ostringstream b;
  b << "baseline granularity (mean 1/m over n in {";
  bool first = true;
  for (std::size_t n : ns) {
    b << (first ? "" : ",") << n;
    first = false;
  }
  b << "}): " << fixed(rep.baseline, 6) << "  reference " << fixed(kBaselineReference, 4);
  rep.baseline_line = b.str();

  rep.svg = render_svg(ok, rep.curves, rep.baseline);
  return rep;
}

}  // namespace stcvae
