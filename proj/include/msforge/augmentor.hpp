#pragma once

// Subject-count augmentation: derived records with the smallest subjects removed.

#include <map>
#include <vector>

#include "msforge/narrative.hpp"
#include "msforge/record.hpp"

namespace msforge {

using IdMap = std::map<long long, long long>;

/// Deletes sentences whose subject references all fall in `removed`, drops any other
/// reference outside the map's domain, then renames "image {old}" to "image {new}".
std::string remap_ids(std::string_view text, const IdMap& id_map, const SubjectIdSet& removed);

/// Subject id (in the record's numbering) removed first: the smallest box, ties going
/// to the higher id.
int smallest_subject(const std::vector<SubjectRecord>& subjects);

/// Records with S-1, S-2, ..., 2 subjects, each dropping the smallest remaining
/// subject. Survivors keep their relative order and are renumbered from 0; the
/// instruction and CoT are remapped and the layout recomputed. Empty when S <= 2.
std::vector<TrainingRecord> reduce_subjects(const TrainingRecord& record);

}  // namespace msforge
