"""
Claiming ownership with encoded records
=======================================

The owner of an encoded model hands a verifier the key and a set of
records it claims were encoded.  The verifier rebuilds the decoder, counts
how many claimed records decode as members, and tests that count against
chance.
"""

###########################################################################
# Encode the blackbox variant: the membership bit lives in the log of the
# output probabilities, so a prediction API is all the verifier needs.

from pathlib import Path

from memenc import pipeline
from memenc.config import load_config
from memenc.decoder import http_oracle, reconstruct_discriminator, serve_predictions, verify_watermark

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk_blackbox.json")
result = pipeline.run_encode(cfg)
print("blackbox encode:", {k: round(v, 3) for k, v in result.metrics.items()})

###########################################################################
# Serve the model over HTTP and verify through the endpoint only.

server = serve_predictions(result.model)
url = "http://%s:%d/" % server.server_address[:2]
oracle = http_oracle(url, result.key.q, result.model.n_classes)
d = reconstruct_discriminator(oracle, result.key, 0, cfg.decoder.inference_config())

claim = result.split.x_m[:200]
print("true claim: ", verify_watermark(d, oracle, claim).to_dict())
print("test records:", verify_watermark(d, oracle, result.split.x_test[:200]).to_dict())
print("queries sent:", oracle.queries)
server.shutdown()
