from reflwalk.cli import run

run()
