"""Origin stub: login fixtures, scaffolding endpoints, request counter."""

import pytest
import requests

from trustgate.origin import OriginConfig, OriginServer

LOGIN_OK = {"username": "John Doe", "password": "johndoe"}


@pytest.fixture()
def origin():
    server = OriginServer()
    server.start()
    yield server
    server.stop()


def test_login_accepts_fixture_credentials(origin):
    response = requests.post(f"{origin.base_url}/login", json=LOGIN_OK, timeout=5)
    assert response.status_code == 200
    assert response.json() == {"ok": True}


def test_login_rejects_wrong_password(origin):
    response = requests.post(
        f"{origin.base_url}/login",
        json={"username": "John Doe", "password": "nope"},
        timeout=5,
    )
    assert response.status_code == 401
    assert response.json()["ok"] is False


def test_login_rejects_unknown_user(origin):
    response = requests.post(
        f"{origin.base_url}/login",
        json={"username": "Jane", "password": "johndoe"},
        timeout=5,
    )
    assert response.status_code == 401


@pytest.mark.parametrize(
    "raw",
    [b"not json", b"{}", b'{"username": "John Doe"}', b'{"username": 1, "password": 2}'],
)
def test_login_malformed_body_is_400(origin, raw):
    response = requests.post(
        f"{origin.base_url}/login",
        data=raw,
        headers={"Content-Type": "application/json"},
        timeout=5,
    )
    assert response.status_code == 400


def test_health_endpoint(origin):
    response = requests.get(f"{origin.base_url}/health", timeout=5)
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_counter_tracks_only_real_requests(origin):
    base = origin.base_url
    assert requests.get(f"{base}/.test/count", timeout=5).json()["count"] == 0
    requests.get(f"{base}/health", timeout=5)
    requests.get(f"{base}/.test/count", timeout=5)
    assert requests.get(f"{base}/.test/count", timeout=5).json()["count"] == 0

    requests.post(f"{base}/login", json=LOGIN_OK, timeout=5)
    assert requests.get(f"{base}/.test/count", timeout=5).json()["count"] == 1
    requests.post(f"{base}/login", json={"username": "x", "password": "y"}, timeout=5)
    assert requests.get(f"{base}/.test/count", timeout=5).json()["count"] == 2


def test_unknown_path_is_404_but_counted(origin):
    response = requests.get(f"{origin.base_url}/nowhere", timeout=5)
    assert response.status_code == 404
    assert origin.request_count == 1


def test_custom_login_path():
    server = OriginServer(OriginConfig(login_path="/resource"))
    server.start()
    try:
        response = requests.post(
            f"{server.base_url}/resource", json=LOGIN_OK, timeout=5
        )
        assert response.status_code == 200
    finally:
        server.stop()


def test_config_rejects_empty_fixture_fields():
    with pytest.raises(ValueError):
        OriginConfig(fixtures={"user": ""})


def test_config_from_dict():
    config = OriginConfig.from_dict(
        {"listen_addr": "127.0.0.1:0", "fixtures": {"a": "b"}}
    )
    assert config.fixtures == {"a": "b"}
    assert config.login_path == "/login"
