from sqlalchemy import create_engine, Column, Integer, String, Text, DateTime, Float, ForeignKey
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import sessionmaker, relationship
from datetime import datetime
from typing import Dict, List, Optional
import json
import logging

from config import Config

logger = logging.getLogger(__name__)

Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(50), nullable=False)
    model_kind = Column(String(50))
    task = Column(String(10))
    seed = Column(Integer)
    output_dir = Column(String(500))
    resolved_config = Column(Text)
    status = Column(String(20), default='running')

    best_epoch = Column(Integer)
    best_val_nll = Column(Float)
    summary = Column(Text)  # JSON string

    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    epochs = relationship("EpochMetric", back_populates="run", order_by="EpochMetric.epoch")
    ablations = relationship("AblationResult", back_populates="run")


class EpochMetric(Base):
    __tablename__ = 'epoch_metrics'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    epoch = Column(Integer, nullable=False)
    train_nll = Column(Float)
    val_nll = Column(Float)
    val_pp = Column(Float)
    learning_rate = Column(Float)
    seconds = Column(Float)
    recorded_at = Column(DateTime, default=datetime.utcnow)

    run = relationship("Run", back_populates="epochs")


class AblationResult(Base):
    __tablename__ = 'ablation_results'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'))
    arm = Column(String(20), nullable=False)
    task = Column(String(10), nullable=False)
    nll = Column(Float)
    pp = Column(Float)
    seed = Column(Integer)
    recorded_at = Column(DateTime, default=datetime.utcnow)

    run = relationship("Run", back_populates="ablations")


class DatabaseManager:
    """Run registry: every train/eval/ablate invocation and its per-epoch curve."""

    def __init__(self, database_url: Optional[str] = None):
        self.engine = create_engine(database_url or Config.DATABASE_URL)
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine, expire_on_commit=False)
        self.current_run_id = None

    def get_session(self):
        return self.Session()

    def start_run(self, command: str, model_kind: str = None, task: str = None, seed: int = None,
                  output_dir: str = None, resolved_config: str = None) -> Optional[int]:
        """Register a run and return its id"""
        session = self.get_session()

        try:
            run = Run(
                command=command,
                model_kind=model_kind,
                task=task,
                seed=seed,
                output_dir=output_dir,
                resolved_config=resolved_config,
            )
            session.add(run)
            session.commit()
            self.current_run_id = run.id

            logger.info(f"Registered {command} run {run.id}")
            return run.id

        except Exception as e:
            logger.error(f"Error registering run: {e}")
            session.rollback()
            return None
        finally:
            session.close()

    def log_epoch(self, run_id: int, log) -> bool:
        """Store one EpochLog row"""
        session = self.get_session()

        try:
            session.add(EpochMetric(
                run_id=run_id,
                epoch=log.epoch,
                train_nll=log.train_nll,
                val_nll=log.val_nll,
                val_pp=log.val_pp,
                learning_rate=log.lr,
                seconds=log.seconds,
            ))
            session.commit()
            return True

        except Exception as e:
            logger.error(f"Error logging epoch {log.epoch} for run {run_id}: {e}")
            session.rollback()
            return False
        finally:
            session.close()

    def finish_run(self, run_id: int, status: str = 'finished', best_epoch: int = None,
                   best_val_nll: float = None, summary: Dict = None) -> bool:
        session = self.get_session()

        try:
            run = session.query(Run).filter_by(id=run_id).first()
            if not run:
                logger.warning(f"Run {run_id} not found")
                return False

            run.status = status
            run.best_epoch = best_epoch
            run.best_val_nll = best_val_nll
            run.summary = json.dumps(summary, sort_keys=True) if summary else None
            run.finished_at = datetime.utcnow()
            session.commit()

            logger.debug(f"Run {run_id} marked {status}")
            return True

        except Exception as e:
            logger.error(f"Error finishing run {run_id}: {e}")
            session.rollback()
            return False
        finally:
            session.close()

    def record_ablation(self, arm: str, task: str, nll: float, pp: float, seed: int = None,
                        run_id: int = None) -> bool:
        session = self.get_session()

        try:
            session.add(AblationResult(
                run_id=run_id if run_id is not None else self.current_run_id,
                arm=arm,
                task=task,
                nll=nll,
                pp=pp,
                seed=seed,
            ))
            session.commit()
            return True

        except Exception as e:
            logger.error(f"Error recording ablation arm {arm}/{task}: {e}")
            session.rollback()
            return False
        finally:
            session.close()

    def epoch_history(self, run_id: int) -> List[Dict]:
        session = self.get_session()

        try:
            rows = session.query(EpochMetric).filter_by(run_id=run_id).order_by(EpochMetric.epoch).all()
            return [{
                'epoch': row.epoch,
                'train_nll': row.train_nll,
                'val_nll': row.val_nll,
                'val_pp': row.val_pp,
                'lr': row.learning_rate,
                'seconds': row.seconds,
            } for row in rows]

        except Exception as e:
            logger.error(f"Error reading epochs of run {run_id}: {e}")
            return []
        finally:
            session.close()

    def best_run(self, command: str = 'train', task: str = None) -> Optional[Dict]:
        """Finished run with the lowest best validation NLL"""
        session = self.get_session()

        try:
            query = session.query(Run).filter(Run.command == command, Run.status == 'finished',
                                              Run.best_val_nll.isnot(None))
            if task:
                query = query.filter(Run.task == task)
            run = query.order_by(Run.best_val_nll.asc()).first()
            if not run:
                return None
            return {
                'id': run.id,
                'model_kind': run.model_kind,
                'task': run.task,
                'seed': run.seed,
                'best_epoch': run.best_epoch,
                'best_val_nll': run.best_val_nll,
                'output_dir': run.output_dir,
            }

        except Exception as e:
            logger.error(f"Error finding best run: {e}")
            return None
        finally:
            session.close()

    def ablation_results(self, run_id: int) -> List[Dict]:
        session = self.get_session()

        try:
            rows = session.query(AblationResult).filter_by(run_id=run_id).order_by(AblationResult.id).all()
            return [{'arm': r.arm, 'task': r.task, 'nll': r.nll, 'pp': r.pp} for r in rows]
        finally:
            session.close()

    def close(self):
        self.engine.dispose()
