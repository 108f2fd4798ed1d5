#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace r2v {

/// Aggregates the metric files of one or more run directories (one arm each):
/// mean and population std over seeds per cell, wins and ranks across arms
/// per column, task-aligned change against the grid:mean arm when present,
/// privacy and token summaries. Throws ValidationError when a run mixes
/// config digests, two runs share an arm, or runs cover different tasks.
nlohmann::json build_report(const std::vector<std::filesystem::path>& runs);

/// Plain-text tables; '*' marks the column best.
std::string render_report(const nlohmann::json& report);

}  // namespace r2v
