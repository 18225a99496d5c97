import json
from typing import Any, Dict, List

import aiosqlite


class ResultsStore:
    """Async SQLite mirror of experiment cells and per-episode records"""

    TIMEOUT = 30

    def __init__(self, logger, config):
        self.logger = logger
        self.config = config
        self.conn_string = config['harness']['database']
        self._connection = None

    async def init_tables(self):
        """Initialize database tables if they don't exist"""
        conn = await self._get_connection()
        async with conn.cursor() as cursor:
            await cursor.execute('''
                CREATE TABLE IF NOT EXISTS cells (
                    experiment TEXT NOT NULL,
                    config_hash TEXT NOT NULL,
                    cell INTEGER NOT NULL,
                    task TEXT,
                    policy TEXT,
                    demos INTEGER,
                    profile TEXT,
                    successes INTEGER,
                    episodes INTEGER,
                    record TEXT
                )
            ''')
            await cursor.execute('''
                CREATE TABLE IF NOT EXISTS episodes (
                    experiment TEXT NOT NULL,
                    config_hash TEXT NOT NULL,
                    cell INTEGER NOT NULL,
                    episode INTEGER NOT NULL,
                    seed INTEGER,
                    success INTEGER,
                    steps INTEGER,
                    record TEXT
                )
            ''')
            await conn.commit()

    async def _get_connection(self):
        if not self._connection:
            self._connection = await aiosqlite.connect(self.conn_string, timeout=self.TIMEOUT)
        return self._connection

    async def close(self):
        """Close database connection if open"""
        if self._connection:
            await self._connection.close()
            self._connection = None

    async def log_cell(self, experiment: str, config_hash: str, index: int, cell: Dict[str, Any],
                       episodes: List[Dict[str, Any]]) -> bool:
        """Stores one cell summary with its episode records. Returns False if the write failed."""
        try:
            conn = await self._get_connection()
            async with conn.cursor() as cursor:
                await cursor.execute('''
                    INSERT INTO cells VALUES (:experiment, :config_hash, :cell, :task, :policy,
                    :demos, :profile, :successes, :episodes, :record)
                ''', {
                    'experiment': experiment,
                    'config_hash': config_hash,
                    'cell': index,
                    'task': cell['task'],
                    'policy': cell['policy'],
                    'demos': cell['demos'],
                    'profile': cell['profile'],
                    'successes': cell['successes'],
                    'episodes': cell['episodes'],
                    'record': json.dumps(cell, sort_keys=True),
                })
                await cursor.executemany('''
                    INSERT INTO episodes VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                ''', [(experiment, config_hash, index, number, record['seed'], int(record['success']),
                       record['steps'], json.dumps(record, sort_keys=True))
                      for number, record in enumerate(episodes)])
                await conn.commit()
            self.logger.debug(f"Stored cell {index} of '{experiment}' with {len(episodes)} episodes")
            return True

        except aiosqlite.Error as e:
            self.logger.error(f"Database error in log_cell: {e}", exc_info=True)
        except Exception as e:
            self.logger.error(f"Unexpected error in log_cell: {e}", exc_info=True)
        return False

    async def fetch_cells(self, experiment: str) -> List[Dict[str, Any]]:
        conn = await self._get_connection()
        async with conn.execute('SELECT record FROM cells WHERE experiment = ? ORDER BY cell',
                                (experiment,)) as cursor:
            rows = await cursor.fetchall()
        return [json.loads(row[0]) for row in rows]

    async def fetch_episodes(self, experiment: str, cell: int) -> List[Dict[str, Any]]:
        conn = await self._get_connection()
        async with conn.execute('SELECT record FROM episodes WHERE experiment = ? AND cell = ? ORDER BY episode',
                                (experiment, cell)) as cursor:
            rows = await cursor.fetchall()
        return [json.loads(row[0]) for row in rows]
