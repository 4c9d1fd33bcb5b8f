#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "msforge/model_gateway.hpp"

namespace msforge {

/// Scene-level failure probabilities injected by the mock models. A draw is keyed on the
/// request seed, which the pipeline derives from (scene seed, stage), so a scene that is
/// hit keeps failing the same way across regenerations.
struct FaultRates {
  double t2i_mismatch = 0.0;    // object-filter check reports a missing class
  double ovd_verify = 0.0;      // box verification rejects every box of the call
  double vlm_validation = 0.0;  // instruction references only hallucinated subjects
  double segmentation = 0.0;    // segmenter returns a mask of the wrong size
};

struct MockOptions {
  FaultRates faults;
  int embedding_dim = 64;
  /// Probability that a with-ID mock instruction carries one extra hallucinated id.
  double stray_id_rate = 0.15;
  /// Salt mixed into every embedding; two mocks with different salts act as different embedders.
  std::uint64_t embedding_salt = 0;
};

/// Deterministic stand-in for every model role. Outputs depend only on the request.
class MockBackend final : public ModelBackend {
 public:
  explicit MockBackend(MockOptions options = {});

  ModelResponse invoke(ModelRole role, const ModelRequest& request) override;
  std::string backend_id() const override { return "mock-v1"; }

  const MockOptions& options() const noexcept { return options_; }

 private:
  ModelResponse text(const ModelRequest& request) const;
  ModelResponse vision(const ModelRequest& request) const;
  ModelResponse image(const ModelRequest& request) const;
  ModelResponse transform(const ModelRequest& request) const;
  ModelResponse detect(const ModelRequest& request) const;
  ModelResponse segment(const ModelRequest& request) const;
  ModelResponse embed(const ModelRequest& request) const;

  bool fault(std::string_view stage, double rate, std::uint64_t seed) const;

  MockOptions options_;
};

/// A gateway with every role bound to one MockBackend.
std::unique_ptr<ModelGateway> make_mock_gateway(MockOptions options = {}, int max_in_flight = 8);

}  // namespace msforge
