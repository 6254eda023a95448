#!/usr/bin/env python3

from setuptools import setup

with open('README.md') as readme_file:
    README = readme_file.read()

with open('HISTORY.md') as history_file:
    HISTORY = history_file.read()

setup_args = dict(
    name='FileComm',
    version='0.3',
    description='File-based message passing over shared or node-local filesystems',
    long_description_content_type="text/markdown",
    long_description=README + '\n\n' + HISTORY,
    license='MIT License',
    packages=['filecomm'],
    author='Aleksandr Kuznetsov, Aleksandr Zarin',
    author_email='izhatomic@yandex.ru, vector-777@yandex.ru',
    keywords=['mpi', 'file-based communication', 'broadcast', 'scp', 'hpc', 'message passing'],
    entry_points={'console_scripts': ['fcomm=filecomm.fc_cli:main']},
)

install_requires = [
    "setuptools~=67.8.0",
    'numpy>=1.24',
]

extras_require = {
    'test': ['pytest>=7.4'],
}

if __name__ == '__main__':
    setup(**setup_args, install_requires=install_requires, extras_require=extras_require)
