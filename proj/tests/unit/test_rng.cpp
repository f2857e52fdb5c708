#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "adabatch/rng.hpp"

using adabatch::Rng;

TEST_CASE("rng determinism and state") {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() != c.next_u64());

  const std::string state = a.serialize();
  const double next = a.uniform();
  Rng d;
  d.deserialize(state);
  CHECK(d.uniform() == next);
  CHECK(d == a);
  CHECK_THROWS(d.deserialize("not a state"));
}

TEST_CASE("rng distributions") {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  CHECK(r.below(1) == 0);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / 20000) < 0.05);
  CHECK(std::abs(sq / 20000 - 1.0) < 0.05);

  auto p = r.permutation(50);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  CHECK(sorted == iota);
  CHECK(p != iota);
}
