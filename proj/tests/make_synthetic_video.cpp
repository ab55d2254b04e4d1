// Writes the four-scene synthetic test video: make_synthetic_video <out.avi> [fps]
#include <cstdlib>
#include <iostream>

#include "support/synthetic.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_synthetic_video <out.avi> [fps]\n";
    return 2;
  }
  const double fps = argc > 2 ? std::atof(argv[2]) : 5.0;
  tkf::testing::write_scene_video(argv[1], tkf::testing::four_scenes(), fps);
  return 0;
}
