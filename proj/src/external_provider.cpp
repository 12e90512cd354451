#include "trajret/external_provider.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "trajret/error.hpp"

namespace trajret {

EndpointConfig EndpointConfig::from_environment() {
  EndpointConfig cfg;
  if (const char* url = std::getenv("TRAJRET_VERDICT_URL")) cfg.url = url;
  if (const char* token = std::getenv("TRAJRET_VERDICT_TOKEN")) cfg.token = token;
  return cfg;
}

void EndpointConfig::validate() const {
  if (url.rfind("http://", 0) != 0) throw ConfigError("oracle", "endpoint url", "must start with http:// (got '" + url + "')");
  if (!(timeout_seconds > 0.0)) throw ConfigError("oracle", "endpoint timeout", "must be > 0");
  if (max_in_flight < 1) throw ConfigError("oracle", "max_in_flight", "must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("oracle", "max_new_tokens", "must be >= 1");
}

ExternalProvider::ExternalProvider(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto slash = cfg_.url.find('/', std::string("http://").size());
  origin_ = slash == std::string::npos ? cfg_.url : cfg_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.url.substr(slash);
  slots_ = std::make_unique<std::counting_semaphore<>>(cfg_.max_in_flight);
}

ExternalProvider::~ExternalProvider() = default;

const char* ExternalProvider::system_text() {
  return "You are an expert epileptologist assessing post-surgical outcome from imaging trajectories. "
         "Use only the evidence given. Answer with SUCCESS or FAILURE followed by one sentence.";
}

std::string ExternalProvider::respond(const EvidencePrompt& prompt) const {
  const nlohmann::json body = {{"system", system_text()},
                               {"prompt", prompt.text()},
                               {"max_new_tokens", cfg_.max_new_tokens},
                               {"temperature", 0.0},
                               {"do_sample", false}};
  slots_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{slots_.get()};

  httplib::Client client(origin_);
  const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
  const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - std::floor(cfg_.timeout_seconds)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw ProviderError("endpoint " + cfg_.url + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError("endpoint " + cfg_.url + " returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

}  // namespace trajret
