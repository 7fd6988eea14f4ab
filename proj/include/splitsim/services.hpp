#pragma once

#include "splitsim/machine.hpp"

namespace splitsim {

enum class ServiceLifecycle : std::uint8_t { Fresh, Active, Disabled };

/// Per-partition storage resource. Partition 0 is the boot partition and is
/// created implicitly when the service starts.
struct StorageResource {
  std::uint16_t partition = 0;
  std::uint32_t first_block = 0;
  std::uint32_t last_block = 0;  // inclusive
  std::optional<Digest> credential;
};

Task<void> serial_in_service(DomainCtx ctx);
Task<void> serial_out_service(DomainCtx ctx);
Task<void> storage_service(DomainCtx ctx);
Task<void> network_service(DomainCtx ctx);
Task<void> sensor_service(DomainCtx ctx);
Task<void> pump_service(DomainCtx ctx);

/// Registers the built-in service programs plus the idle program under the
/// image names used by the default manifest.
void register_default_services(Machine& m);

/// Credential the manager binds for a client program, derived from the image
/// it staged into that domain. Programs derive the same value for themselves.
Digest client_credential(const std::string& image_name);

/// Before touching its device for the first time after a reset, a service
/// folds the freshness constant into its PCR and waits for the TPM to confirm.
Task<void> ensure_fresh(DomainCtx ctx, ServiceLifecycle& lifecycle);

}  // namespace splitsim
