#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "voxelfuse/geom/calibration.hpp"

namespace voxelfuse::pipeline {

// KITTI object calib file: `KEY: v1 v2 ...` per line. P2 (12 values),
// R0_rect (9) and Tr_velo_to_cam (12) are required and composed as
// P2 · [R0_rect 0; 0 1] · [Tr_velo_to_cam; 0 0 0 1]. P0, P1, P3 and
// Tr_imu_to_velo are checked for their value count when present. Any
// malformed line throws ParseError naming the line number and key.
geom::Calibration parse_kitti_calib(const std::filesystem::path& path);
geom::Calibration parse_kitti_calib_text(std::string_view text,
                                         const std::string& origin = "<calib>");

// Writes `P2` as the composed matrix with identity R0_rect and Tr_velo_to_cam,
// which parses back to the same Calibration.
std::string format_kitti_calib(const geom::Calibration& calib);

}  // namespace voxelfuse::pipeline
