"""Score a few requests through the gateway app with mock backends, in-process.

    python3 scripts/gateway_demo.py [--tau 0.77] [--log runs/gateway.jsonl]

The small mock answers with confidence 70, so requests escalate whenever tau > 0.70.
"""

from __future__ import annotations

import argparse
import json

from fastapi.testclient import TestClient

from cascadekit.router.gateway import GatewayConfig
from cascadekit.router.service import create_app

CONFIG = {
    "tau": 0.77,
    "backends": {
        "small": {"id": "small-mock", "endpoint": "mock://static?is_satisfied=true&confidence=70&delay_ms=2"},
        "large": {"id": "large-mock", "endpoint": "mock://static?is_satisfied=false&delay_ms=10"},
    },
    "pricing": {
        "small": {"input_per_million_usd": "0.8", "output_per_million_usd": "4"},
        "large": {"input_per_million_usd": "3", "output_per_million_usd": "15"},
    },
}

REQUEST = {
    "problem": "Solve 3x = 12.",
    "student_answer": "x = 4",
    "criterion": "Explains that dividing both sides by 3 isolates x.",
    "conversation": "Proctor: How did you get 4?\nStudent: I divided both sides by 3.",
}


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tau", type=float, default=CONFIG["tau"])
    parser.add_argument("--log")
    args = parser.parse_args(argv)

    config = GatewayConfig.from_dict({**CONFIG, "tau": args.tau, "log_path": args.log})
    client = TestClient(create_app(config))
    print(json.dumps(client.post("/v1/score", json=REQUEST).json(), indent=2))
    client.put("/v1/config/tau", json={"tau": 0.5})
    after = client.post("/v1/score", json=REQUEST).json()
    print(f"after lowering tau to 0.5: escalated={after['escalated']} is_satisfied={after['is_satisfied']}")


if __name__ == "__main__":
    main()
