import pytest
import numpy as np
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.db.database import Base, get_db
from app.db import models  # noqa: F401
from app.main import app
from app.schemas.connector import ConnectorKind, ConnectorSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_spec(kind, d_v=4, d_llm=6, tokens=4, **kwargs) -> ConnectorSpec:
    kind = ConnectorKind(kind)
    return ConnectorSpec(
        kind=kind, d_v=d_v, d_llm=d_llm,
        num_tokens=tokens if kind.is_compressing else None,
        **kwargs,
    )


@pytest.fixture
def spec_factory():
    return make_spec


@pytest.fixture
def db_session():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    Base.metadata.create_all(bind=engine)
    TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    db = TestingSessionLocal()
    try:
        yield db
    finally:
        db.close()
        Base.metadata.drop_all(bind=engine)


@pytest.fixture
def client(db_session):
    def override_get_db():
        yield db_session

    app.dependency_overrides[get_db] = override_get_db
    try:
        yield TestClient(app)
    finally:
        app.dependency_overrides.clear()
