// Write a synthetic data set for `hdcate estimate`.
//   write_dgp_csv out.csv [n] [p] [seed] [strict|approx]

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "hdcate/hdcate.hpp"

int main(int argc, char** argv) {
  using namespace hdcate;
  if (argc < 2) {
    std::cerr << "usage: write_dgp_csv out.csv [n] [p] [seed] [strict|approx]\n";
    return 1;
  }
  DgpSpec spec;
  spec.n = argc > 2 ? std::atol(argv[2]) : 1000;
  spec.p = argc > 3 ? std::atol(argv[3]) : 20;
  spec.seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 1;
  spec.design = argc > 5 && std::string(argv[5]) == "approx" ? Design::approx_sparse : Design::strict_sparse;
  const GeneratedSample gen = generate(spec);
  const Sample& s = gen.sample;

  std::ofstream out(argv[1]);
  if (!out) {
    std::cerr << "cannot write " << argv[1] << "\n";
    return 1;
  }
  out.precision(17);
  out << "y,d";
  for (Index j = 0; j < s.p(); ++j) out << ",x" << j + 1;
  out << "\n";
  for (Index i = 0; i < s.n(); ++i) {
    out << s.y[i] << "," << s.d[i];
    for (Index j = 0; j < s.p(); ++j) out << "," << s.x(i, j);
    out << "\n";
  }
  std::printf("wrote %ld rows, true CATE = %.4f + %.4f * x1\n", static_cast<long>(s.n()),
              gen.true_cate.intercept, gen.true_cate.slope);
}
