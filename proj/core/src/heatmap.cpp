#include "lrlc/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lrlc {

namespace {

void rename_into_place(const std::string& tmp, const std::string& path) {
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_heatmap_csv(const std::string& path, const TensorF& map) {
  require<ShapeError>(map.rank() == 2, "heatmap must be H x W, got ", shape_str(map.shape()));
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp);
  require<FormatError>(static_cast<bool>(out), "cannot open ", tmp);
  const std::size_t H = map.extent(0), W = map.extent(1);
  char buf[48];
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", double(map(i, j)));
      out << buf;
      if (j + 1 < W) out << ',';
    }
    out << '\n';
  }
  out.close();
  rename_into_place(tmp, path);
}

void write_heatmap_pgm(const std::string& path, const TensorF& map) {
  require<ShapeError>(map.rank() == 2, "heatmap must be H x W, got ", shape_str(map.shape()));
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp, std::ios::binary);
  require<FormatError>(static_cast<bool>(out), "cannot open ", tmp);
  const std::size_t H = map.extent(0), W = map.extent(1);
  out << "P5\n" << W << " " << H << "\n255\n";
  for (std::size_t i = 0; i < H * W; ++i) {
    const float v = std::clamp(map[i], 0.0f, 1.0f);
    out.put(static_cast<char>(std::lround(v * 255.0f)));
  }
  out.close();
  rename_into_place(tmp, path);
}

TensorF read_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  require<FormatError>(static_cast<bool>(in), "cannot open heatmap csv ", path);
  std::vector<float> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t this_cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::strtof(cell.c_str(), nullptr));
      ++this_cols;
    }
    if (rows == 0)
      cols = this_cols;
    else
      require<FormatError>(this_cols == cols, path, ": ragged row ", rows);
    ++rows;
  }
  return TensorF({rows, cols}, std::move(values));
}

}  // namespace lrlc
