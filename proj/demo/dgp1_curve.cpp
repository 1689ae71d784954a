// Cross-fitted CATE curve on one draw of the strictly sparse design, with
// pointwise and uniform 95% bands at a few points.

#include <cstdio>

#include "hdcate/hdcate.hpp"

int main() {
  using namespace hdcate;
  const GeneratedSample gen = gen_dgp1(1000, 100, 2024);
  const Sample& s = gen.sample;

  const Eigen::VectorXd h = rot_bandwidth(s.x1());
  const EvalGrid grid = EvalGrid::uniform(-1.0, 1.0, 201);
  const CateCurve curve = cate_cross_fit(s, 4, grid, h, 7);
  const BootstrapDraws draws = bootstrap_curves(s, curve, 500, 11);

  const ConfidenceBand ucb = uniform_band(curve, draws, 0.05, Side::two);
  const ConfidenceBand pcb = pointwise_band(curve, 0.05, Side::two);

  std::printf("h = %.4f, uniform critical value = %.3f\n", h[0], ucb.critical_value);
  std::printf("%6s %8s %8s %18s %18s\n", "x1", "true", "tau", "pointwise", "uniform");
  for (Index g = 0; g < grid.size(); g += 25) {
    const double x = grid.points(g, 0);
    std::printf("%6.2f %8.3f %8.3f  [%6.3f, %6.3f]  [%6.3f, %6.3f]\n", x, gen.true_cate(x),
                curve.tau[g], pcb.lower[g], pcb.upper[g], ucb.lower[g], ucb.upper[g]);
  }
  bool covered = true;
  for (Index g = 0; g < grid.size(); ++g) covered = covered && ucb.contains(g, gen.true_cate(grid.points(g, 0)));
  std::printf("true curve inside the uniform band: %s\n", covered ? "yes" : "no");
}
