#include <cmath>
#include <set>

#include "doctest.h"
#include "wscim/fabric.hpp"

using namespace wscim;

namespace {

// High-precision closed-form oracle for the Murphy expression.
long double murphy_oracle(long double area_mm2, long double d0_per_cm2) {
  long double x = (area_mm2 / 100.0L) * d0_per_cm2;
  long double y = (1.0L - expl(-x)) / x;
  return y * y;
}

}  // namespace

TEST_CASE("default topology counts match the published wafer") {
  WaferTopology topo;
  CHECK(topo.cores_per_wafer() == 13923);
  CHECK(topo.sram_per_wafer_bytes() == 13923ll * 4 * 1024 * 1024);
  CHECK(topo.sram_per_wafer_bytes() / (1024 * 1024) == 55692);
  // Within 1% of the nominal 54 GB figure.
  double gib = double(topo.sram_per_wafer_bytes()) / (1024.0 * 1024.0 * 1024.0);
  CHECK(gib == doctest::Approx(54.386).epsilon(0.01));
}

TEST_CASE("murphy yield against the closed-form oracle") {
  YieldParams p;  // defaults: A = 2.97 mm^2, D0 = 0.09 /cm^2
  double y = murphy_yield(p);
  CHECK(std::abs(y - double(murphy_oracle(2.97L, 0.09L))) < 1e-12);
  CHECK(y == doctest::Approx(0.99733).epsilon(1e-4));

  // A*D0 = 1 exactly: Y = (1 - 1/e)^2.
  YieldParams unit{1.0, 100.0};
  CHECK(murphy_yield(unit) == doctest::Approx(0.39958).epsilon(1e-4));

  // Limit A*D0 -> 0+ gives Y -> 1.
  YieldParams tiny{1e-9, 1.0};
  CHECK(murphy_yield(tiny) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("defect sampling is deterministic and matches binomial statistics") {
  // 10x10 dies of 10x100 cores = 1e5 cores.
  WaferTopology topo;
  topo.dies_rows = 10;
  topo.dies_cols = 10;
  topo.cores_rows_per_die = 10;
  topo.cores_cols_per_die = 100;
  YieldParams p;
  auto a = sample_defects(topo, p, 42);
  auto b = sample_defects(topo, p, 42);
  CHECK(a.defective == b.defective);
  auto serial = sample_defects_serial(topo, p, 42);
  CHECK(a.defective == serial.defective);

  double y = murphy_yield(p);
  double pd = 1.0 - y;
  double n = double(topo.total_cores());
  double mean = n * pd;
  double sigma = std::sqrt(n * pd * (1.0 - pd));
  CHECK(double(a.defect_count()) > mean - 3 * sigma);
  CHECK(double(a.defect_count()) < mean + 3 * sigma);

  auto c = sample_defects(topo, p, 43);
  CHECK(a.defective != c.defective);
}

TEST_CASE("yield 1 samples no defects") {
  WaferTopology topo;
  topo.dies_rows = 2;
  topo.dies_cols = 2;
  YieldParams p{1e-12, 1e-3};
  auto map = sample_defects(topo, p, 7);
  CHECK(map.defect_count() == 0);
}

TEST_CASE("distance basics") {
  WaferTopology topo;
  CoreCoord a{0, 0, 0, 0, 0};
  CHECK(distance(topo, a, a, 4.0) == 0.0);

  CoreCoord b{0, 0, 0, 2, 3};
  CHECK(distance(topo, a, b, 4.0) == 5.0);  // same die, penalty 1

  // Adjacent across a die boundary: last column of die (0,0) to first of (0,1).
  CoreCoord edge{0, 0, 0, 0, int16_t(topo.cores_cols_per_die - 1)};
  CoreCoord next{0, 0, 1, 0, 0};
  CHECK(manhattan(topo, edge, next) == 1);
  CHECK(distance(topo, edge, next, 4.0) == 4.0);

  CoreCoord other_wafer{1, 0, 0, 0, 0};
  WaferTopology two = topo;
  two.n_wafers = 2;
  CHECK_THROWS_AS(distance(two, a, other_wafer, 4.0), Error);
}

TEST_CASE("distance symmetry and triangle inequality at cost_inter 1") {
  WaferTopology topo;
  uint64_t s = 123;
  auto next = [&] {
    s = s * 6364136223846793005ull + 1442695040888963407ull;
    return s >> 33;
  };
  for (int trial = 0; trial < 200; ++trial) {
    auto rand_core = [&] {
      CoreCoord c;
      c.die_row = int16_t(next() % topo.dies_rows);
      c.die_col = int16_t(next() % topo.dies_cols);
      c.core_row = int16_t(next() % topo.cores_rows_per_die);
      c.core_col = int16_t(next() % topo.cores_cols_per_die);
      return c;
    };
    CoreCoord a = rand_core(), b = rand_core(), c = rand_core();
    CHECK(distance(topo, a, b, 1.0) == distance(topo, b, a, 1.0));
    CHECK(distance(topo, a, c, 1.0) <= distance(topo, a, b, 1.0) + distance(topo, b, c, 1.0));
  }
}

TEST_CASE("snake order") {
  WaferTopology tiny;
  tiny.dies_rows = 2;
  tiny.dies_cols = 2;
  auto order = snake_order(tiny);
  std::vector<std::pair<int, int>> want{{0, 0}, {0, 1}, {1, 1}, {1, 0}};
  CHECK(order == want);

  WaferTopology row;
  row.dies_rows = 1;
  row.dies_cols = 5;
  auto r = snake_order(row);
  for (int i = 0; i < 5; ++i) CHECK(r[size_t(i)] == std::pair<int, int>{0, i});

  WaferTopology full;  // 9x7 default
  auto o = snake_order(full);
  CHECK(o.size() == 63);
  std::set<std::pair<int, int>> uniq(o.begin(), o.end());
  CHECK(uniq.size() == 63);
  for (size_t i = 0; i + 1 < o.size(); ++i) {
    int d = std::abs(o[i].first - o[i + 1].first) + std::abs(o[i].second - o[i + 1].second);
    CHECK(d == 1);
  }
}

TEST_CASE("snake core order covers the wafer with near-adjacent steps") {
  WaferTopology topo;
  topo.dies_rows = 2;
  topo.dies_cols = 3;
  topo.cores_rows_per_die = 3;
  topo.cores_cols_per_die = 4;
  auto order = snake_core_order(topo, 0);
  CHECK(int(order.size()) == topo.cores_per_wafer());
  std::set<uint32_t> uniq;
  for (const auto& c : order) uniq.insert(core_index(topo, c));
  CHECK(int(uniq.size()) == topo.cores_per_wafer());
  // Grid-adjacent steps except at band turns, which jump at most a die height.
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    CHECK(manhattan(topo, order[i], order[i + 1]) <= topo.cores_rows_per_die);
  }
  // Dies are visited whole and in snake order.
  auto dies = snake_order(topo);
  size_t pos = 0;
  for (auto [dr, dc] : dies) {
    for (int k = 0; k < topo.cores_per_die(); ++k, ++pos) {
      CHECK(order[pos].die_row == dr);
      CHECK(order[pos].die_col == dc);
    }
  }
}

TEST_CASE("xy route and defect detours") {
  WaferTopology topo;
  CoreCoord a{0, 0, 0, 1, 1};
  CoreCoord b{0, 0, 0, 3, 4};
  auto path = route(topo, a, b);
  CHECK(int(path.size()) == manhattan(topo, a, b) + 1);
  CHECK(path.front() == a);
  CHECK(path.back() == b);
  for (size_t i = 0; i + 1 < path.size(); ++i) CHECK(manhattan(topo, path[i], path[i + 1]) == 1);

  // A defective core straddling the XY turn forces a detour.
  DefectMap defects;
  defects.defective.assign(size_t(topo.total_cores()), 0);
  CoreCoord block{0, 0, 0, 1, 4};  // XY path turns at (row 1, col 4)
  defects.defective[core_index(topo, block)] = 1;
  auto detour = route(topo, a, b, &defects);
  CHECK(detour.front() == a);
  CHECK(detour.back() == b);
  for (size_t i = 0; i + 1 < detour.size(); ++i) {
    CHECK(manhattan(topo, detour[i], detour[i + 1]) == 1);
    if (i > 0) CHECK(!defects.is_defective(topo, detour[i]));
  }

  // Defective link on the first hop likewise reroutes.
  DefectMap link_defects;
  link_defects.defective.assign(size_t(topo.total_cores()), 0);
  CoreCoord right{0, 0, 0, 1, 2};
  link_defects.defective_links.insert({core_index(topo, a), core_index(topo, right)});
  auto path2 = route(topo, a, b, &link_defects);
  CHECK(path2.back() == b);
  for (size_t i = 0; i + 1 < path2.size(); ++i) {
    CHECK(!link_defects.link_defective(core_index(topo, path2[i]),
                                       core_index(topo, path2[i + 1])));
  }
}

TEST_CASE("core index round trip") {
  WaferTopology topo;
  topo.n_wafers = 2;
  for (uint32_t i : {0u, 1u, 220u, 221u, 13922u, 13923u, 27845u}) {
    CHECK(core_index(topo, core_at(topo, i)) == i);
  }
}
