#pragma once

#include "alignedcut/synthetic.hpp"

#include <filesystem>

namespace alignedcut::cli {

/// clip layers 1-3 (D=8, layer 2 encodes the labels) and mae layer 2 (D=6, encodes the labels).
std::vector<SyntheticEntrySpec> fixture_entries();

/// Writes features/, brain.acfs, rois.json, labels.acfs and a config.ini
/// whose output directory is <out>/run. Empty `entries` means fixture_entries().
void write_fixture(const std::filesystem::path& out, SyntheticOptions options);

}  // namespace alignedcut::cli
