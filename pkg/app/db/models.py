from sqlalchemy import Column, Integer, String, Text, Float, ForeignKey, DateTime, func, Boolean
from sqlalchemy.orm import relationship
from .database import Base


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    subcommand = Column(String(50), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    config_json = Column(Text, nullable=False)
    outputs_json = Column(Text, nullable=False)
    output_dir = Column(String(1024), nullable=False)
    tool_version = Column(String(50), nullable=False)
    created_at = Column(DateTime, default=func.now(), index=True)

    train_runs = relationship("TrainRunRecord", back_populates="run", cascade="all, delete-orphan")


class TrainRunRecord(Base):
    __tablename__ = "train_runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False, index=True)
    connector = Column(String(50), nullable=False, index=True)
    task = Column(String(20), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    steps = Column(Integer, nullable=False)
    final_accuracy = Column(Float, nullable=False)
    final_loss = Column(Float, nullable=True)
    diverged = Column(Boolean, nullable=False, default=False)
    diverged_step = Column(Integer, nullable=True)

    run = relationship("RunRecord", back_populates="train_runs")
