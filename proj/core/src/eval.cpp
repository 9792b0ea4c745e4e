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

#include "sedtune/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sedtune/error.hpp"

namespace sedtune {

std::vector<double> median_filter(const std::vector<double>& x, std::size_t length) {
  if (length == 0 || length % 2 == 0) throw ContractError("median_filter: length must be odd and positive");
  if (length == 1 || x.empty()) return x;
  const long half = static_cast<long>(length / 2), n = static_cast<long>(x.size());
  std::vector<double> out(x.size()), win(length);
  for (long t = 0; t < n; ++t) {
    for (long k = -half; k <= half; ++k) win[static_cast<std::size_t>(k + half)] = x[std::clamp(t + k, 0L, n - 1)];
    std::nth_element(win.begin(), win.begin() + half, win.end());
    out[static_cast<std::size_t>(t)] = win[static_cast<std::size_t>(half)];
  }
  return out;
}

std::vector<DetectedEvent> decode_events(const Tensor& strong, double threshold,
                                         const std::vector<std::size_t>& median_len, double frame_hop) {
  if (strong.rank() != 2) throw ContractError("decode_events: expected [T, C] posteriors");
  const std::size_t T = strong.dim(0), C = strong.dim(1);
  if (median_len.size() != 1 && median_len.size() != C)
    throw ConfigError("decode_events: need one median length or one per class");
  for (std::size_t m : median_len)
    if (m == 0 || m % 2 == 0) throw ConfigError("median filter lengths must be odd and positive");
  std::vector<DetectedEvent> out;
  std::vector<double> b(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) b[t] = strong[t * C + c] > threshold ? 1.0 : 0.0;
    const auto f = median_filter(b, median_len.size() == 1 ? median_len[0] : median_len[c]);
    std::size_t t = 0;
    while (t < T) {
      if (f[t] < 0.5) {
        ++t;
        continue;
      }
      std::size_t e = t;
      while (e < T && f[e] >= 0.5) ++e;
      out.push_back({static_cast<int>(c), t * frame_hop, e * frame_hop, threshold});
      t = e;
    }
  }
  std::sort(out.begin(), out.end(), [](const DetectedEvent& a, const DetectedEvent& b) {
    return std::tie(a.onset, a.class_id) < std::tie(b.onset, b.class_id);
  });
  return out;
}

void PsdsParams::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(dtc) || !unit(gtc) || (cttc && !unit(*cttc))) throw ConfigError("psds: criteria must lie in [0, 1]");
  if (!(alpha_ct >= 0.0 && alpha_st >= 0.0)) throw ConfigError("psds: penalty weights must be >= 0");
  if (!(e_max > 0.0)) throw ConfigError("psds: e_max must be positive");
  if (thresholds.empty()) throw ConfigError("psds: no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw ConfigError("psds: thresholds must lie in (0, 1)");
    if (i && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("psds: thresholds must be strictly increasing");
  }
}

std::vector<double> default_thresholds(std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return t;
}

std::pair<PsdsParams, PsdsParams> psds_presets() {
  PsdsParams a;
  a.dtc = 0.7;
  a.gtc = 0.7;
  a.alpha_ct = 0.0;
  a.alpha_st = 1.0;
  a.e_max = 100.0;
  a.thresholds = default_thresholds();
  PsdsParams b = a;
  b.dtc = 0.1;
  b.gtc = 0.1;
  b.cttc = 0.3;
  b.alpha_ct = 0.5;
  return {a, b};
}

namespace {

double overlap(const TimedEvent& a, const TimedEvent& b) {
  return std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
}

void check_event(const TimedEvent& e, std::size_t n_classes, const char* what) {
  if (e.class_id < 0 || static_cast<std::size_t>(e.class_id) >= n_classes)
    throw ValidationError(std::string(what) + " with unknown class in " + e.filename);
  if (!(e.offset > e.onset)) throw ValidationError(std::string(what) + " with offset <= onset in " + e.filename);
}

}  // namespace

PsdsResult psds(const std::vector<std::vector<TimedEvent>>& detections, const std::vector<TimedEvent>& truth,
                double total_seconds, std::size_t n_classes, const PsdsParams& params) {
  params.validate();
  if (detections.size() != params.thresholds.size())
    throw ContractError("psds: need one detection set per threshold");
  if (truth.empty()) throw ValidationError("psds: no ground-truth events");
  if (!(total_seconds > 0.0)) throw ValidationError("psds: evaluation duration must be positive");
  const std::size_t C = n_classes, K = params.thresholds.size();

  std::unordered_map<std::string, std::vector<std::size_t>> by_file;
  std::vector<std::size_t> gt_count(C, 0);
  std::vector<double> gt_hours(C, 0.0);
  for (std::size_t g = 0; g < truth.size(); ++g) {
    check_event(truth[g], C, "ground truth");
    by_file[truth[g].filename].push_back(g);
    ++gt_count[static_cast<std::size_t>(truth[g].class_id)];
    gt_hours[static_cast<std::size_t>(truth[g].class_id)] += (truth[g].offset - truth[g].onset) / 3600.0;
  }
  const double hours = total_seconds / 3600.0;

  PsdsResult res;
  res.classes.assign(C, {});
  res.has_truth.assign(C, false);
  for (std::size_t c = 0; c < C; ++c) {
    res.has_truth[c] = gt_count[c] > 0;
    res.classes[c].tpr.assign(K, 0.0);
    res.classes[c].fpr.assign(K, 0.0);
    res.classes[c].ctr.assign(K, 0.0);
    res.classes[c].efpr.assign(K, 0.0);
  }

  std::vector<double> cover(truth.size());
  std::vector<double> per_class(C);
  static const std::vector<std::size_t> kNone;
  for (std::size_t k = 0; k < K; ++k) {
    std::fill(cover.begin(), cover.end(), 0.0);
    std::vector<std::size_t> fp(C, 0);
    std::vector<std::size_t> ct(C * C, 0);
    for (const auto& d : detections[k]) {
      check_event(d, C, "detection");
      auto it = by_file.find(d.filename);
      const auto& gts = it == by_file.end() ? kNone : it->second;
      const double len = d.offset - d.onset;
      std::fill(per_class.begin(), per_class.end(), 0.0);
      for (std::size_t g : gts) per_class[static_cast<std::size_t>(truth[g].class_id)] += overlap(d, truth[g]);
      const std::size_t dc = static_cast<std::size_t>(d.class_id);
      if (per_class[dc] / len >= params.dtc) {
        for (std::size_t g : gts)
          if (truth[g].class_id == d.class_id) cover[g] += overlap(d, truth[g]);
        continue;
      }
      ++fp[dc];
      if (params.cttc)
        for (std::size_t c = 0; c < C; ++c)
          if (c != dc && per_class[c] / len >= *params.cttc) ++ct[dc * C + c];
    }
    std::vector<std::size_t> hit(C, 0);
    for (std::size_t g = 0; g < truth.size(); ++g)
      if (cover[g] / (truth[g].offset - truth[g].onset) >= params.gtc) ++hit[static_cast<std::size_t>(truth[g].class_id)];
    for (std::size_t c = 0; c < C; ++c) {
      auto& cc = res.classes[c];
      cc.tpr[k] = gt_count[c] ? static_cast<double>(hit[c]) / static_cast<double>(gt_count[c]) : 0.0;
      cc.fpr[k] = static_cast<double>(fp[c]) / hours;
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t o = 0; o < C; ++o) {
        if (o == c || !gt_count[o]) continue;
        s += static_cast<double>(ct[c * C + o]) / gt_hours[o];
        ++n;
      }
      cc.ctr[k] = n ? s / static_cast<double>(n) : 0.0;
      cc.efpr[k] = cc.fpr[k] + params.alpha_ct * cc.ctr[k];
    }
  }

  std::vector<std::size_t> active;
  for (std::size_t c = 0; c < C; ++c)
    if (res.has_truth[c]) active.push_back(c);
  std::vector<double> xs{0.0};
  for (std::size_t c : active)
    for (double e : res.classes[c].efpr)
      if (e < params.e_max) xs.push_back(e);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  std::vector<double> y(active.size());
  double area = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& cc = res.classes[active[a]];
      double best = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        if (cc.efpr[k] <= xs[i]) best = std::max(best, cc.tpr[k]);
      y[a] = best;
    }
    const double n = static_cast<double>(y.size());
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    const double eff = std::max(0.0, mean - params.alpha_st * std::sqrt(var / n));
    const double next = i + 1 < xs.size() ? xs[i + 1] : params.e_max;
    res.roc_x.push_back(xs[i]);
    res.roc_y.push_back(eff);
    area += eff * (next - xs[i]);
  }
  res.score = area / params.e_max;
  return res;
}

F1Result event_f1(const std::vector<TimedEvent>& detections, const std::vector<TimedEvent>& truth, double collar) {
  if (!(collar >= 0.0)) throw ConfigError("event_f1: collar must be >= 0");
  constexpr double kSlack = 1e-9;
  std::map<std::pair<std::string, int>, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < detections.size(); ++i)
    groups[{detections[i].filename, detections[i].class_id}].first.push_back(i);
  for (std::size_t i = 0; i < truth.size(); ++i) groups[{truth[i].filename, truth[i].class_id}].second.push_back(i);
  F1Result r;
  for (const auto& [key, g] : groups) {
    struct Pair {
      double cost;
      std::size_t gi, di;
    };
    std::vector<Pair> pairs;
    for (std::size_t gi : g.second)
      for (std::size_t di : g.first) {
        const auto &ref = truth[gi], &est = detections[di];
        const double don = std::abs(est.onset - ref.onset), doff = std::abs(est.offset - ref.offset);
        const double off_collar = std::max(collar, 0.2 * (ref.offset - ref.onset));
        if (don <= collar + kSlack && doff <= off_collar + kSlack) pairs.push_back({don + doff, gi, di});
      }
    std::sort(pairs.begin(), pairs.end(),
              [](const Pair& a, const Pair& b) { return std::tie(a.cost, a.gi, a.di) < std::tie(b.cost, b.gi, b.di); });
    std::set<std::size_t> used_g, used_d;
    for (const auto& p : pairs) {
      if (used_g.count(p.gi) || used_d.count(p.di)) continue;
      used_g.insert(p.gi);
      used_d.insert(p.di);
      ++r.tp;
    }
    r.fp += g.first.size() - used_d.size();
    r.fn += g.second.size() - used_g.size();
  }
  if (r.tp + r.fp + r.fn == 0) {
    r.f1 = r.precision = r.recall = 1.0;
    return r;
  }
  r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = 2.0 * static_cast<double>(r.tp) / static_cast<double>(2 * r.tp + r.fp + r.fn);
  return r;
}

namespace {

constexpr const char* kEventHeader = "filename\tonset\toffset\tevent_label";

double parse_seconds(const std::string& s, std::size_t line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line);
  return v;
}

}  // namespace

void write_events_tsv(const std::vector<TimedEvent>& events, const std::vector<std::string>& class_names,
                      const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << kEventHeader << '\n';
  char buf[64];
  for (const auto& e : events) {
    std::snprintf(buf, sizeof buf, "%.3f\t%.3f", e.onset, e.offset);
    f << e.filename << '\t' << buf << '\t' << class_names.at(static_cast<std::size_t>(e.class_id)) << '\n';
  }
}

std::vector<TimedEvent> read_events_tsv(const std::string& path, const std::vector<std::string>& class_names) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError(path + ": empty file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kEventHeader) throw ParseError(path + ": expected header '" + kEventHeader + "'", 1);
  std::vector<TimedEvent> out;
  std::size_t ln = 1;
  while (std::getline(f, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (line.back() == '\t') cols.emplace_back();
    // filename with empty onset/offset/label marks a clip without events
    if (cols.size() == 4 && cols[1].empty() && cols[2].empty() && cols[3].empty()) continue;
    if (cols.size() != 4) throw ParseError(path + ": expected 4 columns, got " + std::to_string(cols.size()), ln);
    auto it = std::find(class_names.begin(), class_names.end(), cols[3]);
    if (it == class_names.end()) throw ValidationError(path + ": unknown class '" + cols[3] + "' on line " + std::to_string(ln));
    TimedEvent e{cols[0], static_cast<int>(it - class_names.begin()), parse_seconds(cols[1], ln), parse_seconds(cols[2], ln)};
    if (!(e.offset > e.onset)) throw ValidationError(path + ": offset <= onset on line " + std::to_string(ln));
    out.push_back(std::move(e));
  }
  return out;
}

EvalReport evaluate_posteriors(const std::vector<ClipPosteriors>& clips, const std::vector<TimedEvent>& truth,
                               std::size_t n_classes, double frame_hop, const EvalConfig& cfg) {
  if (clips.empty()) throw ValidationError("evaluate: no clips");
  double total = 0.0;
  for (const auto& c : clips) total += c.duration;
  std::map<double, std::vector<TimedEvent>> cache;
  auto at = [&](double th) -> const std::vector<TimedEvent>& {
    auto it = cache.find(th);
    if (it != cache.end()) return it->second;
    std::vector<TimedEvent> evs;
    for (const auto& c : clips)
      for (const auto& d : decode_events(c.strong, th, cfg.median_len, frame_hop))
        evs.push_back({c.filename, d.class_id, d.onset, std::min(d.offset, c.duration)});
    return cache.emplace(th, std::move(evs)).first->second;
  };
  auto run = [&](const PsdsParams& p) {
    std::vector<std::vector<TimedEvent>> dets;
    for (double th : p.thresholds) dets.push_back(at(th));
    return psds(dets, truth, total, n_classes, p);
  };
  EvalReport r;
  r.psds1 = run(cfg.psds1);
  r.psds2 = run(cfg.psds2);
  r.detections = at(cfg.f1_threshold);
  r.f1 = event_f1(r.detections, truth, cfg.f1_collar);
  return r;
}

namespace {

nlohmann::json params_json(const PsdsParams& p) {
  nlohmann::json j{{"dtc", p.dtc},           {"gtc", p.gtc},         {"alpha_ct", p.alpha_ct},
                   {"alpha_st", p.alpha_st}, {"e_max", p.e_max},     {"thresholds", p.thresholds}};
  j["cttc"] = p.cttc ? nlohmann::json(*p.cttc) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json curves_json(const PsdsResult& r, const PsdsParams& p, const std::vector<std::string>& names) {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < p.thresholds.size(); ++k)
      rows.push_back({{"threshold", p.thresholds[k]},
                      {"tpr", r.classes[c].tpr[k]},
                      {"fpr", r.classes[c].fpr[k]},
                      {"ctr", r.classes[c].ctr[k]},
                      {"efpr", r.classes[c].efpr[k]}});
    out[names.at(c)] = rows;
  }
  return out;
}

}  // namespace

void write_report_json(const EvalReport& report, const std::vector<std::string>& class_names,
                       const PsdsParams& p1, const PsdsParams& p2, const std::string& path) {
  nlohmann::json j;
  j["psds1"] = report.psds1.score;
  j["psds2"] = report.psds2.score;
  j["event_f1"] = report.f1.f1;
  j["event_precision"] = report.f1.precision;
  j["event_recall"] = report.f1.recall;
  j["params"] = {{"psds1", params_json(p1)}, {"psds2", params_json(p2)}};
  j["per_class_curves"] = {{"psds1", curves_json(report.psds1, p1, class_names)},
                           {"psds2", curves_json(report.psds2, p2, class_names)}};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

}  // namespace sedtune
