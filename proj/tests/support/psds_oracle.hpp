// Copyright 2026 The sedtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sedtune/eval.hpp"
#include "sedtune/rng.hpp"

namespace sedtune {

// Independent scorer: every detection is compared with every ground-truth
// event of the whole corpus, and the ROC is integrated from per-class
// cumulative-maximum step lists.
inline double brute_psds(const std::vector<std::vector<TimedEvent>>& dets, const std::vector<TimedEvent>& truth,
                  double total_seconds, std::size_t C, const PsdsParams& p) {
  const double hours = total_seconds / 3600.0;
  auto ov = [](const TimedEvent& a, const TimedEvent& b) {
    const double lo = std::max(a.onset, b.onset), hi = std::min(a.offset, b.offset);
    return hi > lo ? hi - lo : 0.0;
  };
  std::vector<std::vector<std::pair<double, double>>> pts(C);  // (efpr, tpr)
  for (std::size_t k = 0; k < p.thresholds.size(); ++k) {
    std::vector<double> cover(truth.size(), 0.0);
    std::vector<double> fp(C, 0.0);
    std::vector<std::vector<double>> ct(C, std::vector<double>(C, 0.0));
    for (const auto& d : dets[k]) {
      const double len = d.offset - d.onset;
      double same = 0.0;
      for (const auto& g : truth)
        if (g.filename == d.filename && g.class_id == d.class_id) same += ov(d, g);
      if (same / len >= p.dtc) {
        for (std::size_t gi = 0; gi < truth.size(); ++gi)
          if (truth[gi].filename == d.filename && truth[gi].class_id == d.class_id) cover[gi] += ov(d, truth[gi]);
      } else {
        fp[d.class_id] += 1;
        if (p.cttc)
          for (std::size_t o = 0; o < C; ++o) {
            if (static_cast<int>(o) == d.class_id) continue;
            double s = 0;
            for (const auto& g : truth)
              if (g.filename == d.filename && g.class_id == static_cast<int>(o)) s += ov(d, g);
            if (s / len >= *p.cttc) ct[d.class_id][o] += 1;
          }
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      double n = 0, hit = 0, ctr = 0, others = 0;
      for (std::size_t gi = 0; gi < truth.size(); ++gi)
        if (truth[gi].class_id == static_cast<int>(c)) {
          n += 1;
          if (cover[gi] / (truth[gi].offset - truth[gi].onset) >= p.gtc) hit += 1;
        }
      if (n == 0) continue;
      for (std::size_t o = 0; o < C; ++o) {
        if (o == c) continue;
        double dur = 0;
        for (const auto& g : truth)
          if (g.class_id == static_cast<int>(o)) dur += g.offset - g.onset;
        if (dur == 0) continue;
        ctr += ct[c][o] / (dur / 3600.0);
        others += 1;
      }
      const double efpr = fp[c] / hours + p.alpha_ct * (others ? ctr / others : 0.0);
      pts[c].push_back({efpr, hit / n});
    }
  }
  std::vector<std::vector<std::pair<double, double>>> steps;
  std::vector<double> xs{0.0, p.e_max};
  for (auto& v : pts) {
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    double run = 0;
    for (auto& [x, y] : v) y = run = std::max(run, y);
    for (auto& [x, y] : v) xs.push_back(std::min(x, p.e_max));
    steps.push_back(v);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  double area = 0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    std::vector<double> ys;
    for (const auto& s : steps) {
      auto it = std::upper_bound(s.begin(), s.end(), std::make_pair(xs[i], 2.0));
      ys.push_back(it == s.begin() ? 0.0 : std::prev(it)->second);
    }
    double m = 0;
    for (double y : ys) m += y;
    m /= ys.size();
    double v = 0;
    for (double y : ys) v += (y - m) * (y - m);
    const double eff = std::max(0.0, m - p.alpha_st * std::sqrt(v / ys.size()));
    area += eff * (xs[i + 1] - xs[i]);
  }
  return area / p.e_max;
}

struct Instance {
  std::vector<TimedEvent> truth;
  std::vector<std::vector<TimedEvent>> dets;
  double total = 0;
  std::size_t C = 3;
};

inline Instance random_instance(std::uint64_t seed, std::size_t n_thr) {
  Rng rng(seed);
  Instance in;
  const std::size_t clips = 1 + uniform_index(rng, 5);
  in.C = 1 + uniform_index(rng, 3);
  in.total = 10.0 * clips;
  const std::size_t n_events = 1 + uniform_index(rng, 10);
  for (std::size_t e = 0; e < n_events; ++e) {
    const double on = uniform(rng, 0, 8), len = uniform(rng, 0.3, 2.0);
    in.truth.push_back({"c" + std::to_string(uniform_index(rng, clips)), static_cast<int>(uniform_index(rng, in.C)), on,
                        on + len});
  }
  for (std::size_t k = 0; k < n_thr; ++k) {
    std::vector<TimedEvent> d;
    for (const auto& g : in.truth) {
      if (coin(rng, 0.3)) continue;
      const double on = g.onset + uniform(rng, -0.6, 0.6), off = g.offset + uniform(rng, -0.6, 0.6);
      TimedEvent e = g;
      e.onset = std::max(0.0, on);
      e.offset = std::max(e.onset + 0.05, off);
      if (coin(rng, 0.15)) e.class_id = static_cast<int>(uniform_index(rng, in.C));
      d.push_back(e);
    }
    const std::size_t extra = uniform_index(rng, 3);
    for (std::size_t i = 0; i < extra; ++i) {
      const double on = uniform(rng, 0, 9);
      d.push_back({"c" + std::to_string(uniform_index(rng, clips)), static_cast<int>(uniform_index(rng, in.C)), on,
                   on + uniform(rng, 0.1, 1.0)});
    }
    in.dets.push_back(d);
  }
  return in;
}

}  // namespace sedtune
