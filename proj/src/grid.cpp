#include "pivotmt/grid.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "pivotmt/errors.hpp"
#include "pivotmt/metrics.hpp"

namespace pivotmt {

namespace {

struct Accumulator {
  std::vector<TokenIds> hyps;
  double al_sum = 0.0;
  std::size_t al_count = 0;

  void add(TokenIds hyp, const ActionLog& log, std::size_t src_len) {
    if (src_len > 0 && !hyp.empty()) {
      al_sum += average_lagging(log, src_len, hyp.size());
      ++al_count;
    }
    hyps.push_back(std::move(hyp));
  }

  Score finish(const EvalSet& set) const {
    return {bleu(hyps, set.references).bleu, al_count ? al_sum / static_cast<double>(al_count) : 0.0};
  }
};

void check_set(const EvalSet& set) {
  if (set.sources.size() != set.references.size()) {
    throw ContractError("evaluation set has " + std::to_string(set.sources.size()) + " sources but " +
                        std::to_string(set.references.size()) + " references");
  }
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_k(StageK k) { return k ? std::to_string(*k) : "full"; }

std::string fixed(double v, int digits = 2) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(digits);
  o << v;
  return o.str();
}

}  // namespace

Score direct_score(const Model& model, const EvalSet& set, StageK k, std::size_t max_steps) {
  check_set(set);
  Accumulator acc;
  for (const auto& src : set.sources) {
    if (k) {
      VectorStream s(src);
      auto r = simultaneous_greedy_decode(model, s, *k, max_steps);
      acc.add(std::move(r.tokens), r.log, src.size());
      continue;
    }
    ActionLog log;
    TokenIds out;
    if (!src.empty()) {
      auto enc = encode(model, src);
      out = greedy_decode(model, std::span<const EncoderStates>(&enc, 1), max_steps).tokens;
    }
    for (int t : src) log.read(0, t);
    for (int t : out) log.write(t);
    acc.add(std::move(out), log, src.size());
  }
  return acc.finish(set);
}

Score pipeline_score(const PipelineConfig& config, const EvalSet& set) {
  check_set(set);
  Accumulator acc;
  for (const auto& src : set.sources) {
    PipelineRun run;
    if (config.k_s2p || config.k_p2t) {
      VectorStream s(src);
      run = simultaneous_pipeline(config, s);
    } else {
      run = full_sentence_pipeline(config, src);
    }
    acc.add(std::move(run.target), run.latency_log, src.size());
  }
  return acc.finish(set);
}

GridReport run_grid(const GridModels& models, const EvalSet& set, const std::vector<std::size_t>& ks,
                    bool include_full) {
  check_set(set);
  if (ks.empty()) throw ConfigError("grid needs at least one k value");
  if (!models.direct) throw ConfigError("missing checkpoint for stage 'direct'");
  for (const auto& s : models.setups) {
    for (std::size_t i = 0; i < s.s2p.size(); ++i)
      if (!s.s2p[i]) throw ConfigError("missing checkpoint for stage 's2p[" + std::to_string(i) + "]' of '" + s.label + "'");
    if (!s.p2t) throw ConfigError("missing checkpoint for stage 'p2t' of '" + s.label + "'");
    if (s.s2p.empty()) throw ConfigError("setup '" + s.label + "' has no source-to-pivot stage");
  }

  GridReport report;
  DirectResult direct;
  direct.ks = ks;
  for (std::size_t k : ks) direct.cells.push_back(direct_score(*models.direct, set, k));
  if (include_full) direct.full = direct_score(*models.direct, set, std::nullopt);
  report.direct = direct;

  for (const auto& s : models.setups) {
    GridResult g;
    g.label = s.label;
    g.ks = ks;
    PipelineConfig pc;
    pc.s2p = s.s2p;
    pc.p2t = s.p2t;
    for (std::size_t k1 : ks) {
      std::vector<Score> row;
      for (std::size_t k2 : ks) {
        pc.k_s2p = k1;
        pc.k_p2t = k2;
        row.push_back(pipeline_score(pc, set));
      }
      g.cells.push_back(std::move(row));
    }
    if (include_full) {
      pc.k_s2p = pc.k_p2t = std::nullopt;
      g.full = pipeline_score(pc, set);
    }
    report.grids.push_back(std::move(g));
  }
  return report;
}

void emit_report(const GridReport& report, const std::filesystem::path& csv_path,
                 const std::filesystem::path& markdown_path) {
  if (!report.direct && report.grids.empty()) throw ContractError("empty report");

  std::ostringstream csv;
  csv << "config,k_s2p,k_p2t,bleu,al\n";
  auto row = [&](const std::string& cfg, StageK k1, StageK k2, const Score& s) {
    csv << cfg << ',' << fmt_k(k1) << ',' << fmt_k(k2) << ',' << fmt(s.bleu) << ',' << fmt(s.al) << '\n';
  };
  if (report.direct) {
    const auto& d = *report.direct;
    for (std::size_t j = 0; j < d.ks.size(); ++j) row("direct", std::nullopt, d.ks[j], d.cells[j]);
    if (d.full) row("direct", std::nullopt, std::nullopt, *d.full);
  }
  for (const auto& g : report.grids) {
    for (std::size_t i = 0; i < g.ks.size(); ++i)
      for (std::size_t j = 0; j < g.ks.size(); ++j) row(g.label, g.ks[i], g.ks[j], g.cells[i][j]);
    if (g.full) row(g.label, std::nullopt, std::nullopt, *g.full);
  }

  std::ostringstream md;
  md << "# Pivot translation report\n\n";
  bool any_full = report.direct && report.direct->full;
  for (const auto& g : report.grids) any_full = any_full || g.full.has_value();
  if (any_full) {
    md << "## Full-sentence BLEU\n\n| config | BLEU | AL |\n|---|---|---|\n";
    if (report.direct && report.direct->full)
      md << "| direct | " << fixed(report.direct->full->bleu) << " | " << fixed(report.direct->full->al) << " |\n";
    for (const auto& g : report.grids)
      if (g.full) md << "| " << g.label << " | " << fixed(g.full->bleu) << " | " << fixed(g.full->al) << " |\n";
    md << '\n';
  }
  for (const auto& g : report.grids) {
    md << "## Simultaneous BLEU, " << g.label << " (rows k_s2p, columns k_p2t)\n\n| k_s2p \\ k_p2t |";
    for (std::size_t k : g.ks) md << ' ' << k << " |";
    md << "\n|---|";
    for (std::size_t j = 0; j < g.ks.size(); ++j) md << "---|";
    md << '\n';
    for (std::size_t i = 0; i < g.ks.size(); ++i) {
      double best = g.cells[i][0].bleu;
      for (const auto& c : g.cells[i]) best = std::max(best, c.bleu);
      md << "| " << g.ks[i] << " |";
      for (const auto& c : g.cells[i]) {
        const auto v = fixed(c.bleu);
        md << ' ' << (c.bleu == best ? "**" + v + "**" : v) << " |";
      }
      md << '\n';
    }
    md << '\n';
  }
  if (report.direct && !report.direct->ks.empty()) {
    const auto& d = *report.direct;
    md << "## Direct wait-k\n\n| k |";
    for (std::size_t k : d.ks) md << ' ' << k << " |";
    md << "\n|---|";
    for (std::size_t j = 0; j < d.ks.size(); ++j) md << "---|";
    md << "\n| BLEU |";
    for (const auto& c : d.cells) md << ' ' << fixed(c.bleu) << " |";
    md << "\n| AL |";
    for (const auto& c : d.cells) md << ' ' << fixed(c.al) << " |";
    md << "\n";
  }

  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
    if (!f) throw IoError("short write to " + p.string());
  };
  write(csv_path, csv.str());
  write(markdown_path, md.str());
}

GridReport parse_report_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "config,k_s2p,k_p2t,bleu,al") {
    throw ParseError(path.string() + ":1: expected header config,k_s2p,k_p2t,bleu,al");
  }
  GridReport report;
  std::map<std::string, std::size_t> grid_index;
  std::size_t lineno = 1;

  auto parse_k = [&](const std::string& s) -> StageK {
    if (s == "full") return std::nullopt;
    std::size_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v == 0) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad k value '" + s + "'");
    }
    return v;
  };
  auto parse_d = [&](const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
    }
    return v;
  };

  std::map<std::string, std::map<std::pair<std::size_t, std::size_t>, Score>> cells;
  std::map<std::string, std::vector<std::size_t>> axis;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ss(line);
    std::string part;
    while (std::getline(ss, part, ',')) parts.push_back(part);
    if (parts.size() != 5) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields, found " +
                       std::to_string(parts.size()));
    }
    const auto& cfg = parts[0];
    const StageK k1 = parse_k(parts[1]), k2 = parse_k(parts[2]);
    const Score s{parse_d(parts[3]), parse_d(parts[4])};
    if (cfg == "direct") {
      if (!report.direct) report.direct = DirectResult{};
      if (k1) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": direct rows use k_s2p=full");
      if (k2) {
        report.direct->ks.push_back(*k2);
        report.direct->cells.push_back(s);
      } else {
        report.direct->full = s;
      }
      continue;
    }
    if (!grid_index.count(cfg)) {
      grid_index[cfg] = report.grids.size();
      report.grids.push_back(GridResult{cfg, {}, {}, std::nullopt});
    }
    auto& g = report.grids[grid_index[cfg]];
    if (!k1 && !k2) {
      g.full = s;
    } else if (k1 && k2) {
      cells[cfg][{*k1, *k2}] = s;
      auto& ax = axis[cfg];
      if (std::find(ax.begin(), ax.end(), *k1) == ax.end()) ax.push_back(*k1);
    } else {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": mixed full and wait-k stages");
    }
  }
  for (auto& g : report.grids) {
    g.ks = axis[g.label];
    for (std::size_t k1 : g.ks) {
      std::vector<Score> row;
      for (std::size_t k2 : g.ks) {
        auto it = cells[g.label].find({k1, k2});
        if (it == cells[g.label].end()) {
          throw ParseError(path.string() + ": grid '" + g.label + "' lacks cell (" + std::to_string(k1) + ", " +
                           std::to_string(k2) + ")");
        }
        row.push_back(it->second);
      }
      g.cells.push_back(std::move(row));
    }
    if (cells[g.label].size() != g.ks.size() * g.ks.size()) {
      throw ParseError(path.string() + ": grid '" + g.label + "' is not square");
    }
  }
  return report;
}

}  // namespace pivotmt
