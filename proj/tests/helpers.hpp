#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "hdcate/hdcate.hpp"

namespace testing_util {

inline Eigen::MatrixXd random_matrix(hdcate::Index n, hdcate::Index p, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd x(n, p);
  for (hdcate::Index i = 0; i < n; ++i)
    for (hdcate::Index j = 0; j < p; ++j) x(i, j) = nd(gen);
  return x;
}

inline Eigen::VectorXd random_vector(hdcate::Index n, unsigned seed) {
  return random_matrix(n, 1, seed).col(0);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(HDCATE_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Write a generated sample as y,d,x1..xp.
inline void write_csv(const hdcate::Sample& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  out.precision(17);
  out << "y,d";
  for (hdcate::Index j = 0; j < s.p(); ++j) out << ",x" << j + 1;
  out << "\n";
  for (hdcate::Index i = 0; i < s.n(); ++i) {
    out << s.y[i] << "," << s.d[i];
    for (hdcate::Index j = 0; j < s.p(); ++j) out << "," << s.x(i, j);
    out << "\n";
  }
}

}  // namespace testing_util
