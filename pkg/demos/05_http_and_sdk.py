"""Serve the mesh over real HTTP and drive it with the client SDK.

Needs both packages installed (`pip install -e . -e ./sdk`). The server
here runs in-process on an OS-assigned port; point the SDK at any other
running instance by exporting S3M_BASE_URL and S3M_TOKEN instead.
"""

from __future__ import annotations

import requests

from s3m.server import S3MServer

from olcf_s3m_api import ComputeService, OLCFAPIClient, S3MPermissionError
from olcf_s3m_api.streaming import StreamingService

POLICY = {
    "projects": [{
        "project_id": "fusion",
        "members": ["ada"],
        "resource_acl": ["hpc-a", "streaming"],
        "allocations": [
            {"resource_id": "hpc-a", "total_units": 100},
            {"resource_id": "streaming", "total_units": 100},
        ],
    }]
}


def main() -> None:
    server = S3MServer(policy_document=POLICY, tick_interval=0.05)
    base = server.start_http("127.0.0.1:0")
    server.start_ticker()
    print(f"gateway listening on {base}")

    # The bootstrap admin mints a user token over plain HTTP; everything
    # after this line goes through the SDK.
    minted = requests.post(
        base + "/tokens",
        headers={"Authorization": f"Bearer {server.admin_token}"},
        json={"user_id": "ada", "project_id": "fusion",
              "scopes": ["status.read", "compute.submit", "compute.read",
                         "streaming.manage", "streaming.read"]},
    ).json()["token"]

    with OLCFAPIClient(token=minted, base_url=base) as client:
        print(f"client: {client!r}")

        overall = client.get("/status")
        print(f"facility: {overall['overall']}, "
              f"{len(overall['resources'])} resource(s)")

        compute = ComputeService(client)
        job = compute.submit_job("hpc-a", nodes=1, wall_limit_seconds=120,
                                 sim_seconds=0)
        print(f"job {job['job_id']} submitted: {job['state']}")

        streaming = StreamingService(service_name="redis", api_client=client)
        cluster = streaming.start_cluster("sdk-demo", node_count=1,
                                          cpu_count=2, ram_gib=4)
        print(f"cluster {cluster['cluster_name']}: {cluster['state']}")

        streaming.publish("sdk-demo", "events", "hello over http")
        message = streaming.receive("sdk-demo", "events", group="demo", wait=2)
        print(f"received: {message['payload'].decode()}")
        streaming.stop_cluster("sdk-demo")

        # Scope enforcement travels the wire as typed exceptions.
        try:
            client.delete(f"/compute/jobs/{job['job_id']}")
        except S3MPermissionError as exc:
            print(f"cancel without compute.cancel scope: {exc}")

    server.close()


if __name__ == "__main__":
    main()
