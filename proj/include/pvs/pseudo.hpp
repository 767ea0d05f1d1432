#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pvs/manifest.hpp"
#include "pvs/net.hpp"

namespace pvs::train {

struct PseudoLabelResult {
  /// One entry per successfully labeled case, provenance pseudo.
  Manifest additions;
  /// (case id, message) for cases that failed; the round continues past them.
  std::vector<std::pair<std::string, std::string>> failures;
};

/// Infers every case of `unlabeled` and writes <id>_pseudo.nii.gz to out_dir.
PseudoLabelResult pseudo_label_round(const nn::NetModel<float>& model,
                                     const Manifest& unlabeled,
                                     const std::filesystem::path& out_dir);

/// Union of a fold's gold training cases and pseudo-labeled cases. Throws on
/// an id collision, on a pseudo entry that is not flagged pseudo, and on any
/// pseudo id that names a validation case.
Manifest merge_training_set(const Manifest& gold_fold, const Manifest& pseudo,
                            const std::set<std::string>& validation_ids = {});

}  // namespace pvs::train
