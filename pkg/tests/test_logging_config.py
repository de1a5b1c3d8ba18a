#!/usr/bin/python3
"""
Unit tests for logging_config.
"""

import json
import logging
import os
import shutil
import sys
import tempfile
import unittest
from unittest.mock import patch

# Add the parent directory to the path so we can import logging_config
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from logging_config import LoggingConfig, RateLimitFilter, StructuredFormatter, logging_context


def make_record(message='pruned H1 -> H2', level=logging.INFO):
    return logging.LogRecord('machine', level, __file__, 1, message, None, None)


class TestRateLimitFilter(unittest.TestCase):

    @patch('logging_config.time.time', return_value=100.0)
    def test_repeats_are_dropped(self, mock_time):
        limiter = RateLimitFilter(max_messages_per_second=2)
        passed = [limiter.filter(make_record()) for _ in range(4)]
        self.assertEqual(passed, [True, True, False, False])
        self.assertTrue(limiter.filter(make_record('another message')))

    def test_window_moves_on(self):
        limiter = RateLimitFilter(max_messages_per_second=1)
        with patch('logging_config.time.time', return_value=100.0):
            self.assertTrue(limiter.filter(make_record()))
            self.assertFalse(limiter.filter(make_record()))
        with patch('logging_config.time.time', return_value=101.5):
            self.assertTrue(limiter.filter(make_record()))


class TestStructuredFormatter(unittest.TestCase):

    def test_context_fields(self):
        record = make_record()
        record.stage = 'machine'
        record.product = 'HxBxIxM'
        entry = json.loads(StructuredFormatter().format(record))
        self.assertEqual(entry['message'], 'pruned H1 -> H2')
        self.assertEqual(entry['stage'], 'machine')
        self.assertEqual(entry['product'], 'HxBxIxM')
        self.assertNotIn('seed', entry)

    def test_context_can_be_left_out(self):
        record = make_record()
        record.stage = 'machine'
        self.assertNotIn('stage', json.loads(StructuredFormatter(include_context=False).format(record)))


class TestLoggingContext(unittest.TestCase):

    def test_records_carry_context_inside_block(self):
        with logging_context(stage='synth', seed=7):
            record = logging.getLogRecordFactory()('synth', logging.INFO, __file__, 1, 'x', None, None)
        self.assertEqual((record.stage, record.seed), ('synth', 7))
        after = logging.getLogRecordFactory()('synth', logging.INFO, __file__, 1, 'x', None, None)
        self.assertFalse(hasattr(after, 'stage'))


class TestLoggingConfig(unittest.TestCase):

    def setUp(self):
        self.log_dir = tempfile.mkdtemp()
        self.config = LoggingConfig()

    def tearDown(self):
        self.config.teardown()
        shutil.rmtree(self.log_dir)

    def test_setup_creates_log_files(self):
        self.config.setup_logging(log_dir=self.log_dir)
        self.assertTrue(self.config.initialized)
        self.assertEqual(set(self.config.handlers), {'main', 'debug', 'error'})
        for name in ('nfcompile.log', 'debug.log', 'error.log'):
            self.assertTrue(os.path.exists(os.path.join(self.log_dir, name)))

    def test_setup_runs_once(self):
        self.config.setup_logging(log_dir=self.log_dir)
        handlers = dict(self.config.handlers)
        self.config.setup_logging(log_dir=self.log_dir)
        self.assertEqual(self.config.handlers, handlers)

    def test_oracle_logs_at_debug(self):
        self.config.setup_logging(log_dir=self.log_dir)
        self.assertEqual(self.config.get_logger('oracle').level, logging.DEBUG)
        self.assertEqual(self.config.get_logger('emit').level, logging.INFO)

    def test_teardown_detaches_handlers(self):
        self.config.setup_logging(log_dir=self.log_dir)
        installed = list(self.config.handlers.values())
        self.config.teardown()
        self.assertFalse(self.config.initialized)
        for handler in installed:
            self.assertNotIn(handler, logging.getLogger().handlers)


if __name__ == '__main__':
    unittest.main()
