#pragma once

#include <memory>
#include <semaphore>
#include <string>

#include "trajret/oracle.hpp"

namespace trajret {

struct EndpointConfig {
  std::string url;    // http://host[:port]/path
  std::string token;  // sent as a bearer token when non-empty
  double timeout_seconds = 30.0;
  int max_in_flight = 4;
  int max_new_tokens = 64;

  /// Reads TRAJRET_VERDICT_URL and TRAJRET_VERDICT_TOKEN. The url stays
  /// empty (provider disabled) when the variable is unset.
  static EndpointConfig from_environment();
  void validate() const;
};

/// Posts the prompt to a text-generation endpoint and returns its text
/// verbatim. Requests greedy decoding. Any transport failure or non-2xx status
/// surfaces as ProviderError.
class ExternalProvider final : public VerdictProvider {
 public:
  explicit ExternalProvider(EndpointConfig cfg);
  ~ExternalProvider() override;

  std::string respond(const EvidencePrompt& prompt) const override;
  std::string name() const override { return "external"; }

  static const char* system_text();

 private:
  EndpointConfig cfg_;
  std::string origin_;
  std::string path_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

}  // namespace trajret
