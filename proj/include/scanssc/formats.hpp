#pragma once

#include <string>

#include "scanssc/voxel.hpp"

namespace scanssc::io {

// Label grid file: magic "SSCG", version u16, dims X/Y/Z u32, label width
// u8 (1 or 2 bytes per label), payload in x-major / z-fastest order,
// trailing CRC32 of the payload. All integers little-endian.
void write_voxel_grid(const std::string& path, const LabeledGrid& grid);
LabeledGrid read_voxel_grid(const std::string& path);

// Logit grid file: magic "SSCL", version u16, dims X/Y/Z/P u32, payload of
// 32-bit little-endian floats in class-fastest order, trailing CRC32.
void write_logit_grid(const std::string& path, const LogitGrid& grid);
LogitGrid read_logit_grid(const std::string& path);

// Flat CSV interop: "x,y,z,label" rows for label grids; "x,y,z,c0..cP-1"
// rows for logit grids. Headers included.
void write_voxel_grid_csv(const std::string& path, const LabeledGrid& grid);
LabeledGrid read_voxel_grid_csv(const std::string& path);
void write_logit_grid_csv(const std::string& path, const LogitGrid& grid);
LogitGrid read_logit_grid_csv(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace scanssc::io
