"""
SQLite registry of experiment runs, per-fold results and learning curves
"""

import datetime
import json
import sqlite3

from utils.logger import logger


class RunStore:
    """Persistent run history for one output directory"""

    def __init__(self, db_file):
        """
        Initialize the run registry

        Args:
            db_file (str): Path to SQLite database file
        """
        self.db_file = str(db_file)
        self.db_conn = None
        self._initialize_db()

    def _initialize_db(self):
        """Create tables if they don't exist"""
        self.db_conn = sqlite3.connect(self.db_file)
        cursor = self.db_conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                command TEXT,
                fingerprint TEXT,
                seed TEXT,
                dca_enabled INTEGER,
                total_parameters INTEGER,
                mean_accuracy REAL,
                std_accuracy REAL,
                config_json TEXT,
                started_at TEXT,
                finished_at TEXT
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS fold_results (
                run_id INTEGER,
                fold INTEGER,
                best_epoch INTEGER,
                accuracy REAL,
                sensitivity REAL,
                specificity REAL,
                auc REAL,
                metrics_json TEXT,
                checkpoint_path TEXT,
                PRIMARY KEY (run_id, fold)
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS epoch_history (
                run_id INTEGER,
                fold INTEGER,
                epoch INTEGER,
                train_loss REAL,
                train_acc REAL,
                val_loss REAL,
                val_acc REAL,
                PRIMARY KEY (run_id, fold, epoch)
            )
        """)

        self.db_conn.commit()
        logger.info(f"Initialized run registry at {self.db_file}")

    def close(self):
        """Close the database connection"""
        if self.db_conn:
            self.db_conn.close()
            self.db_conn = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def record_run(self, command, fingerprint, config, seed, dca_enabled, total_parameters):
        """
        Open a run record

        Args:
            command (str): CLI subcommand
            fingerprint (str): Config fingerprint
            config (dict): Effective config echo
            seed (int): Master seed (u64, stored as text)
            dca_enabled (bool): Attention layer switch
            total_parameters (int): Trainable parameter count

        Returns:
            int: ID of the run
        """
        cursor = self.db_conn.cursor()
        now = datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")

        cursor.execute(
            """
            INSERT INTO runs (command, fingerprint, seed, dca_enabled, total_parameters, config_json, started_at)
            VALUES (?, ?, ?, ?, ?, ?, ?)
            """,
            (command, fingerprint, str(seed), int(dca_enabled), total_parameters, json.dumps(config, sort_keys=True), now)
        )
        self.db_conn.commit()
        return cursor.lastrowid

    def finish_run(self, run_id, mean_accuracy, std_accuracy):
        cursor = self.db_conn.cursor()
        now = datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        cursor.execute(
            "UPDATE runs SET mean_accuracy = ?, std_accuracy = ?, finished_at = ? WHERE id = ?",
            (mean_accuracy, std_accuracy, now, run_id)
        )
        self.db_conn.commit()

    def record_fold(self, run_id, fold, best_epoch, metrics, checkpoint_path):
        """
        Store the test metrics of one fold

        Args:
            run_id (int): Run ID
            fold (int): Fold index
            best_epoch (int): Kept epoch
            metrics (dict): MetricsReport.to_dict()
            checkpoint_path (str): Saved weights
        """
        cursor = self.db_conn.cursor()
        cursor.execute(
            """
            INSERT OR REPLACE INTO fold_results
            (run_id, fold, best_epoch, accuracy, sensitivity, specificity, auc, metrics_json, checkpoint_path)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """,
            (run_id, fold, best_epoch, metrics.get("accuracy"), metrics.get("sensitivity"),
             metrics.get("specificity"), metrics.get("auc"), json.dumps(metrics, sort_keys=True),
             str(checkpoint_path))
        )
        self.db_conn.commit()

    def record_epochs(self, run_id, fold, history):
        """
        Store the learning curve of one fold

        Args:
            run_id (int): Run ID
            fold (int): Fold index
            history (list[EpochRecord]): Per-epoch figures
        """
        if not history:
            return

        cursor = self.db_conn.cursor()
        rows = [(run_id, fold, r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc) for r in history]

        batch_size = 100
        for i in range(0, len(rows), batch_size):
            cursor.executemany(
                """
                INSERT OR REPLACE INTO epoch_history
                (run_id, fold, epoch, train_loss, train_acc, val_loss, val_acc)
                VALUES (?, ?, ?, ?, ?, ?, ?)
                """,
                rows[i:i + batch_size]
            )

        self.db_conn.commit()

    def list_runs(self):
        """
        Returns:
            list: One dictionary per run, oldest first
        """
        cursor = self.db_conn.cursor()
        cursor.execute("""
            SELECT id, command, fingerprint, seed, dca_enabled, total_parameters,
                   mean_accuracy, std_accuracy, started_at, finished_at
            FROM runs
            ORDER BY id
        """)

        return [
            {
                "id": row[0],
                "command": row[1],
                "fingerprint": row[2],
                "seed": int(row[3]),
                "dca_enabled": bool(row[4]),
                "total_parameters": row[5],
                "mean_accuracy": row[6],
                "std_accuracy": row[7],
                "started_at": row[8],
                "finished_at": row[9],
            }
            for row in cursor.fetchall()
        ]

    def fold_results(self, run_id):
        cursor = self.db_conn.cursor()
        cursor.execute(
            "SELECT fold, best_epoch, accuracy, metrics_json FROM fold_results WHERE run_id = ? ORDER BY fold",
            (run_id,)
        )
        return [
            {"fold": row[0], "best_epoch": row[1], "accuracy": row[2], "metrics": json.loads(row[3])}
            for row in cursor.fetchall()
        ]

    def epoch_count(self, run_id, fold):
        cursor = self.db_conn.cursor()
        cursor.execute("SELECT COUNT(*) FROM epoch_history WHERE run_id = ? AND fold = ?", (run_id, fold))
        return cursor.fetchone()[0]
