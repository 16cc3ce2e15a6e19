#include <filesystem>
#include <fstream>
#include <memory>

#include "doctest.h"
#include "fixtures.hpp"
#include "pivotmt/errors.hpp"
#include "pivotmt/grid.hpp"

using namespace pivotmt;
using namespace pivotmt::testing;

namespace {

struct Zoo {
  std::unique_ptr<Model> direct, s2p_a, s2p_b, p2t_a, p2t_ab;
  Zoo() {
    direct = std::make_unique<Model>(tiny_config(1, 1));
    s2p_a = std::make_unique<Model>(tiny_config(1, 2));
    s2p_b = std::make_unique<Model>(tiny_config(1, 3));
    p2t_a = std::make_unique<Model>(tiny_config(1, 4));
    p2t_ab = std::make_unique<Model>(tiny_config(2, 5));
    for (Model* m : {direct.get(), s2p_a.get(), s2p_b.get(), p2t_a.get(), p2t_ab.get()}) sharpen(*m, 2.5);
  }
  GridModels models() const {
    GridModels g;
    g.direct = direct.get();
    g.setups.push_back({"a", {s2p_a.get()}, p2t_a.get()});
    g.setups.push_back({"multi", {s2p_a.get(), s2p_b.get()}, p2t_ab.get()});
    return g;
  }
};

EvalSet eval_set(std::size_t n, std::uint64_t seed, std::size_t max_len = 7) {
  Rng rng(seed);
  EvalSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.sources.push_back(random_tokens(rng, 1 + rng.below(max_len), 12));
    s.references.push_back(random_tokens(rng, 1 + rng.below(max_len), 12));
  }
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pivotmt_grid_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("grid has one cell per k pair") {
  Zoo zoo;
  auto set = eval_set(6, 1);
  const std::vector<std::size_t> ks{1, 2, 4, 6, 8};
  auto report = run_grid(zoo.models(), set, ks);
  REQUIRE(report.grids.size() == 2);
  for (const auto& g : report.grids) {
    CHECK(g.ks == ks);
    REQUIRE(g.cells.size() == 5);
    std::size_t cells = 0;
    for (const auto& row : g.cells) cells += row.size();
    CHECK(cells == 25);
    CHECK(g.full.has_value());
  }
  REQUIRE(report.direct.has_value());
  CHECK(report.direct->cells.size() == 5);
  CHECK(run_grid(zoo.models(), set, ks) == report);
}

TEST_CASE("grid cell with k past every length equals the full-sentence pipeline") {
  Zoo zoo;
  auto set = eval_set(15, 2);
  auto report = run_grid(zoo.models(), set, {64});
  for (const auto& g : report.grids) CHECK(g.cells[0][0].bleu == g.full->bleu);
  CHECK(report.direct->cells[0].bleu == report.direct->full->bleu);
}

TEST_CASE("missing stage is a configuration error naming it") {
  Zoo zoo;
  auto set = eval_set(2, 3);
  auto m = zoo.models();
  m.setups[1].p2t = nullptr;
  CHECK_THROWS_WITH_AS(run_grid(m, set, {1}), doctest::Contains("'p2t' of 'multi'"), ConfigError);
  m = zoo.models();
  m.setups[1].s2p[1] = nullptr;
  CHECK_THROWS_WITH_AS(run_grid(m, set, {1}), doctest::Contains("s2p[1]"), ConfigError);
  m = zoo.models();
  m.direct = nullptr;
  CHECK_THROWS_WITH_AS(run_grid(m, set, {1}), doctest::Contains("direct"), ConfigError);
}

TEST_CASE("full-sentence latency equals the source length") {
  Zoo zoo;
  auto set = eval_set(10, 4);
  double mean_len = 0;
  std::size_t n = 0;
  auto s = direct_score(*zoo.direct, set, std::nullopt);
  for (const auto& src : set.sources) {
    auto e = encode(*zoo.direct, src);
    if (greedy_decode(*zoo.direct, std::span<const EncoderStates>(&e, 1), 256).tokens.empty()) continue;
    mean_len += static_cast<double>(src.size());
    ++n;
  }
  REQUIRE(n > 0);
  CHECK(s.al == doctest::Approx(mean_len / static_cast<double>(n)));
}

TEST_CASE("report csv and markdown shapes") {
  Zoo zoo;
  auto set = eval_set(4, 5);
  const std::vector<std::size_t> ks{1, 2, 4, 6, 8};
  auto full = run_grid(zoo.models(), set, ks, false);

  GridReport one;
  one.grids.push_back(full.grids[0]);
  auto csv = scratch("one.csv"), md = scratch("one.md");
  emit_report(one, csv, md);
  auto rows = lines_of(csv);
  CHECK(rows.size() == 26);
  CHECK(rows[0] == "config,k_s2p,k_p2t,bleu,al");

  // One table row per k_s2p value.
  std::size_t table_rows = 0;
  for (const auto& l : lines_of(md))
    if (l.rfind("| ", 0) == 0 && l.find("k_s2p") == std::string::npos) ++table_rows;
  CHECK(table_rows == ks.size());
  CHECK(parse_report_csv(csv) == one);
}

TEST_CASE("report round trip with direct and full-sentence rows") {
  Zoo zoo;
  auto set = eval_set(5, 6);
  auto report = run_grid(zoo.models(), set, {1, 3});
  auto csv = scratch("all.csv"), md = scratch("all.md");
  emit_report(report, csv, md);
  CHECK(parse_report_csv(csv) == report);
  auto rows = lines_of(csv);
  CHECK(rows.size() == 1 + 3 + 2 * 5);
  CHECK(rows[3].rfind("direct,full,full,", 0) == 0);
  CHECK(rows.back().rfind("multi,full,full,", 0) == 0);

  // Bold marks each row maximum.
  std::size_t bold_rows = 0;
  for (const auto& l : lines_of(md))
    if (l.find("**") != std::string::npos) ++bold_rows;
  CHECK(bold_rows >= 4);
}

TEST_CASE("report errors") {
  CHECK_THROWS_AS(emit_report(GridReport{}, scratch("e.csv"), scratch("e.md")), ContractError);
  GridReport r;
  r.direct = DirectResult{{1}, {{10.0, 1.0}}, std::nullopt};
  CHECK_THROWS_AS(emit_report(r, "/etc/hostname/x.csv", scratch("e.md")), IoError);
  auto bad = scratch("bad.csv");
  std::ofstream(bad) << "config,k_s2p,k_p2t,bleu,al\nmulti,1,x,2,3\n";
  CHECK_THROWS_AS(parse_report_csv(bad), ParseError);
  std::ofstream(bad) << "config,k_s2p,k_p2t,bleu,al\nmulti,1,1,2\n";
  CHECK_THROWS_AS(parse_report_csv(bad), ParseError);
  std::ofstream(bad) << "config,k_s2p,k_p2t,bleu,al\nmulti,1,1,2,3\nmulti,1,2,2,3\n";
  CHECK_THROWS_AS(parse_report_csv(bad), ParseError);
  CHECK_THROWS_AS(parse_report_csv(scratch("missing.csv")), IoError);
}
