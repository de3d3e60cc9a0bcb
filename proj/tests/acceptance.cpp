// Prints one line per acceptance criterion and exits non-zero if any fails.

#include <cstdio>
#include <exception>

#include "support/criteria.hpp"

int main() {
  using namespace stormloop::testing;
  using Fn = Criterion (*)();
  const Fn criteria[] = {criterion_hold_and_release, criterion_sequencing,
                         [] { return criterion_mass_conservation(); },
                         criterion_dfw_heterogeneity, criterion_lossy_link, criterion_command_loop,
                         criterion_adaptive_sampling, criterion_pid, criterion_protocol, criterion_determinism};
  int failed = 0;
  int number = 0;
  for (const Fn fn : criteria) {
    ++number;
    Criterion c;
    try {
      c = fn();
    } catch (const std::exception& e) {
      c = {number, "criterion " + std::to_string(number), false, std::string("threw: ") + e.what()};
    }
    if (!c.pass) ++failed;
    std::printf("[%s] %2d %s: %s\n", c.pass ? "PASS" : "FAIL", c.number, c.name.c_str(), c.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", number - failed, number);
  return failed == 0 ? 0 : 1;
}
