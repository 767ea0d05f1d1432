#include "pvs/pseudo.hpp"

#include <stdexcept>

#include "pvs/nifti.hpp"
#include "pvs/train.hpp"

namespace pvs::train {

PseudoLabelResult pseudo_label_round(const nn::NetModel<float>& model,
                                     const Manifest& unlabeled,
                                     const std::filesystem::path& out_dir) {
  PseudoLabelResult res;
  res.additions.fingerprint = unlabeled.fingerprint;
  res.additions.preprocess_fingerprint = unlabeled.preprocess_fingerprint;
  if (unlabeled.cases.empty()) return res;
  std::filesystem::create_directories(out_dir);
  for (const auto& c : unlabeled.cases) {
    try {
      std::vector<Volume> channels{nifti::read_volume(c.image)};
      if (c.image2) channels.push_back(nifti::read_volume(*c.image2));
      const LabelMap pred = infer(model, channels);
      const auto path = std::filesystem::absolute(out_dir / (c.id + "_pseudo.nii.gz"));
      nifti::write(pred, path);
      ManifestCase e = c;
      e.labels = path;
      e.annotated_slices.reset();
      e.provenance = Provenance::kPseudo;
      res.additions.cases.push_back(std::move(e));
    } catch (const std::exception& ex) {
      res.failures.emplace_back(c.id, ex.what());
    }
  }
  return res;
}

Manifest merge_training_set(const Manifest& gold_fold, const Manifest& pseudo,
                            const std::set<std::string>& validation_ids) {
  for (const auto& c : gold_fold.cases) {
    if (validation_ids.contains(c.id)) {
      throw std::invalid_argument("merge: validation case " + c.id + " in the training set");
    }
  }
  Manifest out = gold_fold;
  for (const auto& c : pseudo.cases) {
    if (c.provenance != Provenance::kPseudo) {
      throw std::invalid_argument("merge: case " + c.id + " is not flagged pseudo");
    }
    if (validation_ids.contains(c.id)) {
      throw std::invalid_argument("merge: pseudo case " + c.id +
                                  " is a validation case (leakage)");
    }
    if (gold_fold.find(c.id) != nullptr) {
      throw std::invalid_argument("merge: case id collision on " + c.id);
    }
    out.cases.push_back(c);
  }
  out.validate(false);
  return out;
}

}  // namespace pvs::train
