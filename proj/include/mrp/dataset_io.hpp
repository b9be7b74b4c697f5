#pragma once

// CSV forms of a duration dataset.
//
// Duration scale:  subject_id,epoch,from_state,to_state,gap,x,z1..zd
// Calendar scale:  subject_id,epoch,from_state,to_state,entry,exit,x,z1..zd
//
// to_state is a state label or CENSORED. Rows of one subject are
// contiguous with epochs 0, 1, 2, ... The duration form carries no entry
// times; on reading they are rebuilt as running sums of the gaps, which is
// exact for histories that start at time 0 with untruncated gaps.

#include <string>

#include "mrp/duration.hpp"

namespace mrp::io {

inline constexpr const char* kCensoredToken = "CENSORED";

std::string write_duration_csv(const DurationDataset& data);
std::string write_calendar_csv(const DurationDataset& data);

// Detects the form from the header. Throws DataError with the source line.
// State labels are indexed in order of first appearance.
DurationDataset read_dataset_csv(const std::string& text, const std::string& source);

}  // namespace mrp::io
