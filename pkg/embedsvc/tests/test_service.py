from __future__ import annotations

import base64
import math

import pytest
from fastapi.testclient import TestClient

from embedsvc.config import ServiceConfig
from embedsvc.service import create_app

IMAGE = base64.b64encode(b"\x89PNG\r\n" + bytes(range(120))).decode("ascii")


@pytest.fixture
def client():
    return TestClient(create_app(ServiceConfig(dimension=32)))


def embed(client, space, items):
    return client.post("/embed", json={"space": space, "items": items})


def norm(vector):
    return math.sqrt(sum(x * x for x in vector))


class TestEmbed:
    def test_order_preserving_unit_norm_consistent_dimension(self, client):
        items = [
            {"instance_id": f"i{k}", "text": f"question number {k}"} for k in range(5)
        ]
        response = embed(client, "question", items)
        assert response.status_code == 200
        body = response.json()
        assert body["dimension"] == 32
        assert [v["instance_id"] for v in body["vectors"]] == [f"i{k}" for k in range(5)]
        for entry in body["vectors"]:
            assert len(entry["vector"]) == body["dimension"]
            assert abs(norm(entry["vector"]) - 1.0) < 1e-5

    def test_identical_input_identical_output(self, client):
        items = [{"instance_id": "x", "text": "the same text"}]
        one = embed(client, "question", items).json()
        two = embed(client, "question", items).json()
        assert one == two

    def test_unrelated_texts_not_identical(self, client):
        response = embed(
            client,
            "question",
            [
                {"instance_id": "a", "text": "how many curves are shown"},
                {"instance_id": "b", "text": "entirely unrelated words here"},
            ],
        )
        va, vb = (entry["vector"] for entry in response.json()["vectors"])
        cos = sum(x * y for x, y in zip(va, vb))
        assert cos < 1.0 - 1e-6

    def test_image_space(self, client):
        response = embed(client, "image", [{"instance_id": "im", "image_base64": IMAGE}])
        assert response.status_code == 200
        assert abs(norm(response.json()["vectors"][0]["vector"]) - 1.0) < 1e-5

    def test_joint_space_requires_both(self, client):
        response = embed(client, "joint", [{"instance_id": "j", "text": "only text"}])
        assert response.status_code == 400
        response = embed(
            client, "joint", [{"instance_id": "j", "text": "t", "image_base64": IMAGE}]
        )
        assert response.status_code == 200

    def test_question_space_requires_text(self, client):
        response = embed(client, "question", [{"instance_id": "q"}])
        assert response.status_code == 400

    def test_schema_violation_is_400(self, client):
        response = client.post("/embed", json={"space": "sideways", "items": []})
        assert response.status_code == 400
        response = client.post("/embed", json={"items": "nope"})
        assert response.status_code == 400

    def test_undecodable_image_is_422(self, client):
        response = embed(
            client, "image", [{"instance_id": "bad", "image_base64": "%%%%"}]
        )
        assert response.status_code == 422

    def test_batch_cap_is_enforced(self):
        client = TestClient(create_app(ServiceConfig(dimension=16, max_batch=2)))
        items = [{"instance_id": f"i{k}", "text": "t"} for k in range(3)]
        response = embed(client, "question", items)
        assert response.status_code == 400
        assert "cap" in response.json()["detail"]

    def test_empty_batch(self, client):
        response = embed(client, "question", [])
        assert response.status_code == 200
        assert response.json()["vectors"] == []


class TestHealthAndLoadState:
    def test_healthy_after_load(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert set(body["models"]) == {"question", "image", "joint"}
        assert set(body["dimensions"].values()) == {32}

    def test_503_while_loading(self):
        client = TestClient(create_app(ServiceConfig(dimension=16), preload=False))
        assert client.get("/health").status_code == 503
        response = embed(client, "question", [{"instance_id": "x", "text": "t"}])
        assert response.status_code == 503
        client.app.state.registry.load()
        assert client.get("/health").status_code == 200
        assert embed(client, "question", [{"instance_id": "x", "text": "t"}]).status_code == 200

    def test_unknown_route_404(self, client):
        assert client.get("/nope").status_code == 404
